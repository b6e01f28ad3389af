use std::collections::BTreeMap;

use serde::Serialize;

use super::Corpus;

/// Mention counts by category tag and by entity.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub scenes: usize,
    pub tokens: usize,
    pub mentions: usize,
    pub by_category: BTreeMap<String, usize>,
    pub by_entity: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        scenes: corpus.scenes.len(),
        tokens: corpus.num_tokens(),
        ..Default::default()
    };
    for m in corpus.mentions() {
        stats.mentions += 1;
        *stats.by_category.entry(m.category).or_default() += 1;
        *stats.by_entity.entry(m.entity).or_default() += 1;
    }
    stats
}

impl CorpusStats {
    /// Plain-text table: one `category  count  percent` line per tag.
    pub fn category_table(&self) -> String {
        let mut rows: Vec<(&String, &usize)> = self.by_category.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut out = String::new();
        for (tag, n) in rows {
            let pct = if self.mentions == 0 {
                0.0
            } else {
                100.0 * *n as f64 / self.mentions as f64
            };
            out.push_str(&format!("{tag:<8}{n:>8}{pct:>8.1}%\n"));
        }
        out.push_str(&format!("{:<8}{:>8}\n", "total", self.mentions));
        out
    }
}
