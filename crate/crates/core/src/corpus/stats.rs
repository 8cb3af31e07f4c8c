use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BodySystem, Corpus, Modality, Sex};

/// Descriptive counts in the shape of the dataset overview table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub by_institution: BTreeMap<u8, usize>,
    pub by_system: BTreeMap<BodySystem, usize>,
    pub by_modality: BTreeMap<Modality, usize>,
    pub by_sex: BTreeMap<Sex, usize>,
    /// Inclusive (min, max) age; `None` for an empty corpus.
    pub age_range: Option<(u32, u32)>,
}

pub fn corpus_stats(c: &Corpus) -> CorpusStats {
    let mut s = CorpusStats {
        total: c.len(),
        ..Default::default()
    };
    for r in &c.records {
        *s.by_institution.entry(r.institution).or_default() += 1;
        *s.by_system.entry(r.system).or_default() += 1;
        *s.by_modality.entry(r.modality).or_default() += 1;
        *s.by_sex.entry(r.sex).or_default() += 1;
        s.age_range = Some(match s.age_range {
            None => (r.age, r.age),
            Some((lo, hi)) => (lo.min(r.age), hi.max(r.age)),
        });
    }
    s
}

impl CorpusStats {
    pub fn female(&self) -> usize {
        self.by_sex.get(&Sex::Female).copied().unwrap_or(0)
    }

    pub fn male(&self) -> usize {
        self.by_sex.get(&Sex::Male).copied().unwrap_or(0)
    }

    pub fn institution(&self, i: u8) -> usize {
        self.by_institution.get(&i).copied().unwrap_or(0)
    }

    pub fn system(&self, s: BodySystem) -> usize {
        self.by_system.get(&s).copied().unwrap_or(0)
    }

    pub fn modality(&self, m: Modality) -> usize {
        self.by_modality.get(&m).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::report;
    use super::*;

    #[test]
    fn empty_corpus_has_zero_stats() {
        let s = corpus_stats(&Corpus::default());
        assert_eq!(s, CorpusStats::default());
        assert_eq!(s.age_range, None);
    }

    #[test]
    fn partitions_sum_to_total() {
        let mut a = report("a", 1, "x", "y");
        a.age = 3;
        let mut b = report("b", 2, "x", "z");
        b.sex = Sex::Male;
        b.modality = Modality::Mri;
        b.age = 90;
        let s = corpus_stats(&Corpus::new(vec![a, b], "t"));
        assert_eq!(s.total, 2);
        assert_eq!(s.by_institution.values().sum::<usize>(), 2);
        assert_eq!(s.female() + s.male(), 2);
        assert_eq!(s.modality(Modality::Ct) + s.modality(Modality::Mri), 2);
        assert_eq!(s.age_range, Some((3, 90)));
    }
}
