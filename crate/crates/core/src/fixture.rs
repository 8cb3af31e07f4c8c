//! Deterministic synthetic corpus used by tests, examples and the bundled
//! end-to-end configuration.
//!
//! The 40 records mimic the multi-institution shape of a real corpus: a large
//! in-house institution covering all five systems and five small external
//! institutions with one system each. Cleaning targets are planted on purpose:
//! exact duplicate pairs, a boilerplate title line on 90% of in-house findings,
//! and lexicon noise (including one nested occurrence that needs two passes).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BodySystem, Corpus, Modality, RadiologyReport, Sex};
use crate::inference::{BackendConfig, MockScript};
use crate::provenance;

pub const FIXTURE_SEED: u64 = 20_231_016;
pub const FIXTURE_TITLE: &str = "放射科影像诊断报告单";
pub const FIXTURE_LEXICON: [&str; 3] = ["[[AUTOPRINT]]", "（本报告仅供临床参考）", "@@签名待审@@"];
/// Records per institution, in-house first.
pub const FIXTURE_INSTITUTIONS: [usize; 6] = [30, 4, 2, 1, 2, 1];

/// Counts recorded while generating, independent of any corpus statistics code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub total: usize,
    pub by_institution: BTreeMap<u8, usize>,
    pub by_system: BTreeMap<String, usize>,
    pub by_modality: BTreeMap<String, usize>,
    pub by_sex: BTreeMap<String, usize>,
    pub age_min: u32,
    pub age_max: u32,
    pub planted_duplicates: usize,
    pub title_line: String,
    pub titled_records: usize,
    pub lexicon_records: usize,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub corpus: Corpus,
    pub manifest: FixtureManifest,
    pub lexicon: Vec<String>,
}

struct Phrasebook {
    sites: [&'static str; 5],
    observations: [&'static str; 5],
    conclusions: [&'static str; 5],
}

fn phrasebook(s: BodySystem) -> Phrasebook {
    match s {
        BodySystem::Chest => Phrasebook {
            sites: ["右肺上叶", "左肺下叶", "右肺中叶", "左肺上叶舌段", "右肺下叶背段"],
            observations: ["见一磨玻璃结节", "见斑片状高密度影", "见条索状致密影", "见实性小结节", "见点状钙化灶"],
            conclusions: ["磨玻璃结节，建议随访复查", "炎性病变可能", "纤维灶", "实性结节，建议年度复查", "钙化灶"],
        },
        BodySystem::Abdomen => Phrasebook {
            sites: ["肝右叶", "肝左叶", "胆囊", "左肾", "胰头"],
            observations: ["见类圆形低密度影", "见稍长T2信号灶", "壁稍增厚", "见小囊状无强化灶", "见结节状强化灶"],
            conclusions: ["囊肿", "血管瘤可能", "慢性胆囊炎", "单纯性囊肿", "占位性病变，建议进一步检查"],
        },
        BodySystem::MuscleSkeleton => Phrasebook {
            sites: ["右膝关节", "左肩关节", "腰4椎体", "右髋关节", "左踝关节"],
            observations: ["关节间隙变窄", "冈上肌腱信号增高", "见骨质增生", "关节腔少量积液", "距骨见骨挫伤信号"],
            conclusions: ["退行性变", "冈上肌腱损伤", "骨质增生", "关节腔积液", "骨挫伤"],
        },
        BodySystem::Head => Phrasebook {
            sites: ["左侧基底节区", "右侧额叶", "双侧脑室旁", "脑桥", "右侧颞叶"],
            observations: ["见小片状低密度影", "见点状长T2信号", "白质见斑片状异常信号", "见小圆形低密度灶", "见软化灶"],
            conclusions: ["腔隙性脑梗死", "缺血灶", "脑白质变性", "腔隙灶", "软化灶"],
        },
        BodySystem::MaxillofacialNeck => Phrasebook {
            sites: ["甲状腺右叶", "甲状腺左叶", "左侧颌下", "右侧腮腺", "双侧颈部"],
            observations: ["见低密度结节", "见稍低密度灶", "见肿大淋巴结", "见类圆形结节", "见多发小淋巴结"],
            conclusions: ["结节，建议超声检查", "结节性甲状腺肿可能", "淋巴结肿大", "腮腺混合瘤可能", "淋巴结显示"],
        },
    }
}

/// External institutions 2..=6 each contribute one system, in canonical order.
fn system_for(institution: u8, k: usize) -> BodySystem {
    if institution == 1 {
        BodySystem::ALL[k % 5]
    } else {
        BodySystem::ALL[usize::from(institution) - 2]
    }
}

fn base_record(rng: &mut ChaCha8Rng, global: usize, institution: u8, k: usize) -> RadiologyReport {
    let system = system_for(institution, k);
    let book = phrasebook(system);
    let site = book.sites[(k + global) % 5];
    let pick = (k / 5 + k) % 5;
    let size = 3 + global;
    let edges = ["清楚", "欠清", "光整"];
    RadiologyReport {
        record_id: format!("fx{global:03}"),
        institution,
        system,
        modality: if rng.random_bool(0.8) { Modality::Ct } else { Modality::Mri },
        age: rng.random_range(18..=85),
        sex: if rng.random_bool(0.5) { Sex::Female } else { Sex::Male },
        finding: format!(
            "{site}{}，大小约{size}mm，边界{}。",
            book.observations[pick],
            edges[global % 3]
        ),
        impression: format!("{site}{}。", book.conclusions[pick]),
    }
}

/// Appends lexicon noise by global position; the nested case needs two passes.
fn plant_lexicon(r: &mut RadiologyReport, global: usize) {
    if global % 4 == 1 {
        r.finding.push_str(FIXTURE_LEXICON[0]);
    }
    if global % 5 == 3 {
        r.impression.push_str(FIXTURE_LEXICON[1]);
    }
    if global == 7 {
        r.finding.push_str("@@签名@@签名待审@@待审@@");
    }
}

/// Builds the fixture. Output depends only on `seed`.
pub fn generate_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Planted duplicates: two in-house records and one from institution 2.
    let duplicate_sources: [(u8, usize); 3] = [(1, 4), (1, 11), (2, 0)];
    // In-house records left without the title line (3 of 30 = 10%).
    let untitled_inhouse = [2usize, 17, 23];

    let mut records: Vec<RadiologyReport> = Vec::new();
    let mut in_house_seen = 0usize;
    let mut titled = 0usize;
    for (idx, &count) in FIXTURE_INSTITUTIONS.iter().enumerate() {
        let institution = idx as u8 + 1;
        let dups: Vec<usize> = duplicate_sources
            .iter()
            .filter(|(i, _)| *i == institution)
            .map(|(_, k)| *k)
            .collect();
        let unique = count - dups.len();
        let first = records.len();
        for k in 0..unique {
            let mut r = base_record(&mut rng, records.len(), institution, k);
            if institution == 1 {
                if !untitled_inhouse.contains(&in_house_seen) {
                    r.finding = format!("{FIXTURE_TITLE}\n{}", r.finding);
                }
                in_house_seen += 1;
            }
            plant_lexicon(&mut r, records.len());
            records.push(r);
        }
        for k in dups {
            let src = records[first + k].clone();
            let mut d = base_record(&mut rng, records.len(), institution, k);
            d.finding = src.finding;
            d.impression = src.impression;
            if institution == 1 {
                in_house_seen += 1;
            }
            records.push(d);
        }
    }

    let mut manifest = FixtureManifest {
        seed,
        total: records.len(),
        by_institution: BTreeMap::new(),
        by_system: BTreeMap::new(),
        by_modality: BTreeMap::new(),
        by_sex: BTreeMap::new(),
        age_min: u32::MAX,
        age_max: 0,
        planted_duplicates: duplicate_sources.len(),
        title_line: FIXTURE_TITLE.to_string(),
        titled_records: 0,
        lexicon_records: 0,
    };
    for r in &records {
        *manifest.by_institution.entry(r.institution).or_default() += 1;
        *manifest.by_system.entry(r.system.as_str().to_string()).or_default() += 1;
        *manifest.by_modality.entry(r.modality.as_str().to_string()).or_default() += 1;
        *manifest.by_sex.entry(r.sex.as_str().to_string()).or_default() += 1;
        manifest.age_min = manifest.age_min.min(r.age);
        manifest.age_max = manifest.age_max.max(r.age);
        titled += usize::from(r.finding.starts_with(FIXTURE_TITLE));
        let noisy = |t: &str| t.contains("[[") || t.contains("（本报告") || t.contains("@@");
        manifest.lexicon_records += usize::from(noisy(&r.finding) || noisy(&r.impression));
    }
    manifest.titled_records = titled;

    Fixture {
        corpus: Corpus::new(records, "fixture"),
        manifest,
        lexicon: FIXTURE_LEXICON.iter().map(|s| s.to_string()).collect(),
    }
}

/// Impression with lexicon noise removed and only the leading `keep` characters kept.
fn truncated_impression(r: &RadiologyReport, keep: f64) -> String {
    let clean = FIXTURE_LEXICON.iter().fold(r.impression.clone(), |acc, t| acc.replace(t, ""));
    let n = clean.chars().count();
    let k = ((n as f64 * keep).ceil() as usize).clamp(1, n.max(1));
    clean.chars().take(k).collect()
}

fn lookup(f: &Fixture, keep: f64) -> MockScript {
    MockScript::Lookup {
        responses: f
            .corpus
            .records
            .iter()
            .map(|r| (r.record_id.clone(), truncated_impression(r, keep)))
            .collect(),
        fallback: None,
    }
}

/// Offline backends for the bundled run: an echo of the finding, a partial
/// oracle, a constant reply and a script that fails twice before echoing.
pub fn fixture_backends(f: &Fixture) -> Vec<BackendConfig> {
    vec![
        BackendConfig::mock("mock-oracle", lookup(f, 0.6)),
        BackendConfig::mock("mock-echo", MockScript::Echo),
        BackendConfig::mock(
            "mock-fixed",
            MockScript::Fixed {
                text: "未见明显异常。".into(),
            },
        ),
        BackendConfig::mock(
            "mock-flaky",
            MockScript::Sequence {
                steps: vec![
                    MockScript::Null,
                    MockScript::Repeat {
                        token: "结节".into(),
                        count: 6,
                    },
                    MockScript::Slow {
                        latency_ms: 40,
                        then: Box::new(MockScript::Echo),
                    },
                ],
            },
        ),
    ]
}

/// Template id to post-training backend for a stub trainer: template `t`
/// reproduces a `t / 5` share of every impression, so template 5 is best.
pub fn fixture_stub_trainer(f: &Fixture) -> BTreeMap<u8, BackendConfig> {
    (1u8..=5)
        .map(|t| (t, BackendConfig::mock(format!("tuned-t{t}"), lookup(f, f64::from(t) / 5.0))))
        .collect()
}

fn pretty<T: Serialize>(v: &T) -> String {
    format!("{}\n", serde_json::to_string_pretty(v).expect("serializable fixture"))
}

/// Writes corpus, manifest, lexicon, backends and stub-trainer files into `dir`.
pub fn write_fixture_files(f: &Fixture, dir: &std::path::Path) -> std::io::Result<()> {
    provenance::write_jsonl(&dir.join("corpus.jsonl"), None, &f.corpus.records)?;
    provenance::write_text(&dir.join("manifest.json"), &pretty(&f.manifest))?;
    provenance::write_text(&dir.join("lexicon.txt"), &format!("{}\n", f.lexicon.join("\n")))?;
    provenance::write_text(&dir.join("backends.json"), &pretty(&fixture_backends(f)))?;
    let stub: BTreeMap<String, BackendConfig> =
        fixture_stub_trainer(f).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    provenance::write_text(&dir.join("stub_trainer.json"), &pretty(&stub))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_plants() {
        let f = generate_fixture(FIXTURE_SEED);
        assert_eq!(f.corpus.len(), 40);
        let per: Vec<usize> = (1..=6).map(|i| f.manifest.by_institution[&i]).collect();
        assert_eq!(per, FIXTURE_INSTITUTIONS.to_vec());
        assert_eq!(f.manifest.titled_records, 27);
        f.corpus.ensure_unique_ids().unwrap();
        let pairs: std::collections::HashSet<_> =
            f.corpus.records.iter().map(|r| (&r.finding, &r.impression)).collect();
        assert_eq!(pairs.len(), 37);
        // External institutions hold a single system each.
        for r in &f.corpus.records {
            if r.institution > 1 {
                assert_eq!(r.system, BodySystem::ALL[usize::from(r.institution) - 2]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_fixture(5);
        let b = generate_fixture(5);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.manifest, b.manifest);
    }
}
