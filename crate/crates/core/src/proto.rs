//! Countermeasure protocol parsing and the attacker/defender data split.
//!
//! Protocols are whitespace-separated lines of
//! `speaker utt_id field3 system key`; spoofed systems route sides by id
//! (A01/A03/A05 attack, A02/A04/A06 defend) and each speaker's bona fide
//! utterances are halved between the sides with a seeded shuffle.

use crate::metrics::Key;
use crate::nn::init::{mix_seed, rng_from_seed};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

/// One protocol row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub speaker_id: String,
    pub utt_id: String,
    /// "-" for bona fide, attack system id (e.g. "A01") otherwise.
    pub system_id: String,
    pub key: Key,
}

impl TrialRecord {
    /// Renders the record back to protocol format (field 3 is unused and
    /// written as "-").
    pub fn to_line(&self) -> String {
        format!(
            "{} {} - {} {}",
            self.speaker_id,
            self.utt_id,
            self.system_id,
            self.key.as_str()
        )
    }
}

/// Parses a protocol file into records.
///
/// Lines must have at least the five canonical fields; extra trailing
/// columns (2021-era metadata) are ignored with a warning. Malformed lines
/// and duplicate utterance ids fail with their line number.
pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_protocol_str(&text, path)
}

fn parse_protocol_str(text: &str, path: &Path) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut extra_column_lines = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        if fields.len() > 5 {
            extra_column_lines += 1;
        }
        let key = Key::parse(fields[4]).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("unknown key \"{}\"", fields[4]),
        })?;
        let system_id = fields[3].to_string();
        if (key == Key::Bonafide) != (system_id == "-") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!(
                    "key \"{}\" inconsistent with system id \"{system_id}\"",
                    fields[4]
                ),
            });
        }
        let utt_id = fields[1].to_string();
        if !seen.insert(utt_id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("duplicate utterance id \"{utt_id}\""),
            });
        }
        records.push(TrialRecord {
            speaker_id: fields[0].to_string(),
            utt_id,
            system_id,
            key,
        });
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty protocol: {}",
            path.display()
        )));
    }
    if extra_column_lines > 0 {
        log::warn!(
            "{}: ignored extra columns on {extra_column_lines} lines",
            path.display()
        );
    }
    Ok(records)
}

/// Which data each side may train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Attacker and defender see disjoint utterances.
    Disjoint,
    /// Defender uses the full set; attacker keeps its disjoint portion.
    SharedDefenderFull,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "disjoint" => Some(Scenario::Disjoint),
            "shared_defender_full" => Some(Scenario::SharedDefenderFull),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub scenario: Scenario,
    pub attacker_systems: Vec<String>,
    pub defender_systems: Vec<String>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn standard(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            attacker_systems: vec!["A01".into(), "A03".into(), "A05".into()],
            defender_systems: vec!["A02".into(), "A04".into(), "A06".into()],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .attacker_systems
            .iter()
            .any(|s| self.defender_systems.contains(s))
        {
            return Err(Error::Config(
                "attacker and defender system lists overlap".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SplitOutcome {
    pub attacker: Vec<TrialRecord>,
    pub defender: Vec<TrialRecord>,
    pub warnings: Vec<String>,
}

/// Splits records into attacker and defender sets per the plan.
///
/// Spoofed records route by system id; spoofed systems on neither list go
/// to the defender with a warning. Bona fide records are halved per
/// speaker by a seeded shuffle, the attacker taking the extra utterance on
/// odd counts. In the shared-defender scenario the defender set is the
/// whole input while the attacker keeps its disjoint portion.
pub fn make_split(records: &[TrialRecord], plan: &SplitPlan) -> Result<SplitOutcome> {
    plan.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to split".into()));
    }

    let mut warnings = Vec::new();
    // attacker membership by record index
    let mut to_attacker = vec![false; records.len()];

    let mut unknown_systems: Vec<String> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.key == Key::Spoof {
            if plan.attacker_systems.contains(&r.system_id) {
                to_attacker[i] = true;
            } else if !plan.defender_systems.contains(&r.system_id)
                && !unknown_systems.contains(&r.system_id)
            {
                unknown_systems.push(r.system_id.clone());
            }
        }
    }
    for sys in unknown_systems {
        warnings.push(format!(
            "system {sys} is on neither side's list; routed to defender"
        ));
    }

    // Bona fide: per-speaker seeded shuffle, attacker takes ceil(n/2).
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.key == Key::Bonafide {
            by_speaker.entry(&r.speaker_id).or_default().push(i);
        }
    }
    for (speaker, mut indices) in by_speaker {
        let mut rng = rng_from_seed(mix_seed(plan.seed, speaker));
        indices.shuffle(&mut rng);
        let take = indices.len().div_ceil(2);
        for &i in &indices[..take] {
            to_attacker[i] = true;
        }
    }

    let attacker: Vec<TrialRecord> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| to_attacker[*i])
        .map(|(_, r)| r.clone())
        .collect();
    let defender: Vec<TrialRecord> = match plan.scenario {
        Scenario::Disjoint => records
            .iter()
            .enumerate()
            .filter(|(i, _)| !to_attacker[*i])
            .map(|(_, r)| r.clone())
            .collect(),
        Scenario::SharedDefenderFull => records.to_vec(),
    };

    Ok(SplitOutcome {
        attacker,
        defender,
        warnings,
    })
}

/// A spoofed record paired with a bona fide record of the same (claimed)
/// speaker; the record-level input to enhancement training.
#[derive(Debug, Clone)]
pub struct RecordPair {
    pub spoof: TrialRecord,
    pub bonafide: TrialRecord,
}

#[derive(Debug)]
pub struct PairingOutcome {
    pub pairs: Vec<RecordPair>,
    pub warnings: Vec<String>,
}

/// Pairs every attacker spoof record with a seeded-uniform bona fide
/// record of its target speaker. Speakers with spoofs but no bona fide
/// pool are reported and skipped.
pub fn pair_for_enhancement(attacker_set: &[TrialRecord], seed: u64) -> Result<PairingOutcome> {
    let mut bona_by_speaker: HashMap<&str, Vec<&TrialRecord>> = HashMap::new();
    for r in attacker_set {
        if r.key == Key::Bonafide {
            bona_by_speaker.entry(&r.speaker_id).or_default().push(r);
        }
    }
    let mut rng = rng_from_seed(mix_seed(seed, "pairing"));
    let mut pairs = Vec::new();
    let mut warned: HashSet<&str> = HashSet::new();
    let mut warnings = Vec::new();
    for r in attacker_set.iter().filter(|r| r.key == Key::Spoof) {
        match bona_by_speaker.get(r.speaker_id.as_str()) {
            Some(pool) => {
                let pick = pool[rng.gen_range(0..pool.len())];
                pairs.push(RecordPair {
                    spoof: r.clone(),
                    bonafide: pick.clone(),
                });
            }
            None => {
                if warned.insert(&r.speaker_id) {
                    warnings.push(format!(
                        "speaker {} has spoofed utterances but no bona fide pool; skipped",
                        r.speaker_id
                    ));
                }
            }
        }
    }
    Ok(PairingOutcome { pairs, warnings })
}

/// Per-side counts for the split summary JSON.
#[derive(Debug, Serialize)]
pub struct SideSummary {
    pub total: usize,
    pub bonafide: usize,
    pub spoof: usize,
    pub per_system: BTreeMap<String, usize>,
    pub bonafide_per_speaker: BTreeMap<String, usize>,
}

impl SideSummary {
    pub fn of(records: &[TrialRecord]) -> Self {
        let mut per_system = BTreeMap::new();
        let mut bonafide_per_speaker = BTreeMap::new();
        let mut bonafide = 0;
        for r in records {
            match r.key {
                Key::Bonafide => {
                    bonafide += 1;
                    *bonafide_per_speaker
                        .entry(r.speaker_id.clone())
                        .or_insert(0) += 1;
                }
                Key::Spoof => {
                    *per_system.entry(r.system_id.clone()).or_insert(0) += 1;
                }
            }
        }
        Self {
            total: records.len(),
            bonafide,
            spoof: records.len() - bonafide,
            per_system,
            bonafide_per_speaker,
        }
    }
}

/// Writes records in protocol format.
pub fn write_protocol(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn parse_str(text: &str) -> Result<Vec<TrialRecord>> {
        parse_protocol_str(text, &PathBuf::from("test.txt"))
    }

    #[test]
    fn parses_canonical_lines() {
        let recs = parse_str(
            "LA_0079 LA_T_1138215 - - bonafide\nLA_0079 LA_T_1271820 - A01 spoof\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].speaker_id, "LA_0079");
        assert_eq!(recs[0].utt_id, "LA_T_1138215");
        assert_eq!(recs[0].system_id, "-");
        assert_eq!(recs[0].key, Key::Bonafide);
        assert_eq!(recs[1].system_id, "A01");
        assert_eq!(recs[1].key, Key::Spoof);
    }

    #[test]
    fn four_field_line_is_parse_error_with_line_number() {
        let err = parse_str("LA_0079 LA_T_1 - bonafide\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_key_and_system_rejected() {
        assert!(parse_str("S1 U1 - A01 bonafide\n").is_err());
        assert!(parse_str("S1 U1 - - spoof\n").is_err());
    }

    #[test]
    fn duplicate_utt_id_rejected() {
        let err = parse_str("S1 U1 - - bonafide\nS2 U1 - - bonafide\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_protocol_is_invalid() {
        assert!(matches!(parse_str(""), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn extra_columns_tolerated() {
        let recs = parse_str("S1 U1 - A01 spoof notrim eval\n").unwrap();
        assert_eq!(recs[0].system_id, "A01");
    }

    fn synthetic_records(speakers: usize, bona_per: usize, spoof_per: usize) -> Vec<TrialRecord> {
        let systems = ["A01", "A02", "A03", "A04", "A05", "A06"];
        let mut out = Vec::new();
        for s in 0..speakers {
            let speaker = format!("SP{s:02}");
            for u in 0..bona_per {
                out.push(TrialRecord {
                    speaker_id: speaker.clone(),
                    utt_id: format!("B_{s:02}_{u:03}"),
                    system_id: "-".into(),
                    key: Key::Bonafide,
                });
            }
            for u in 0..spoof_per {
                out.push(TrialRecord {
                    speaker_id: speaker.clone(),
                    utt_id: format!("S_{s:02}_{u:03}"),
                    system_id: systems[u % systems.len()].into(),
                    key: Key::Spoof,
                });
            }
        }
        out
    }

    #[test]
    fn bona_fide_halved_per_speaker_with_attacker_extra() {
        for bona_per in [4usize, 5] {
            let records = synthetic_records(3, bona_per, 0);
            let out =
                make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 7)).unwrap();
            let att = SideSummary::of(&out.attacker);
            let def = SideSummary::of(&out.defender);
            for s in 0..3 {
                let speaker = format!("SP{s:02}");
                assert_eq!(
                    att.bonafide_per_speaker[&speaker],
                    bona_per.div_ceil(2),
                    "attacker, n={bona_per}"
                );
                assert_eq!(
                    def.bonafide_per_speaker[&speaker],
                    bona_per / 2,
                    "defender, n={bona_per}"
                );
            }
        }
    }

    #[test]
    fn spoof_systems_route_by_side() {
        let records = synthetic_records(2, 2, 6);
        let out = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 1)).unwrap();
        for r in out.attacker.iter().filter(|r| r.key == Key::Spoof) {
            assert!(["A01", "A03", "A05"].contains(&r.system_id.as_str()));
        }
        for r in out.defender.iter().filter(|r| r.key == Key::Spoof) {
            assert!(["A02", "A04", "A06"].contains(&r.system_id.as_str()));
        }
    }

    #[test]
    fn unknown_system_goes_to_defender_with_warning() {
        let mut records = synthetic_records(1, 2, 2);
        records.push(TrialRecord {
            speaker_id: "SP00".into(),
            utt_id: "S_XX".into(),
            system_id: "A19".into(),
            key: Key::Spoof,
        });
        let out = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 1)).unwrap();
        assert!(out.defender.iter().any(|r| r.utt_id == "S_XX"));
        assert!(!out.attacker.iter().any(|r| r.utt_id == "S_XX"));
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn shared_defender_full_keeps_whole_set() {
        let records = synthetic_records(2, 4, 6);
        let disjoint =
            make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 3)).unwrap();
        let shared =
            make_split(&records, &SplitPlan::standard(Scenario::SharedDefenderFull, 3)).unwrap();
        assert_eq!(shared.defender.len(), records.len());
        // attacker portion identical to the disjoint scenario
        let ids = |v: &[TrialRecord]| v.iter().map(|r| r.utt_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&shared.attacker), ids(&disjoint.attacker));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let records = synthetic_records(4, 5, 6);
        let a = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 42)).unwrap();
        let b = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 42)).unwrap();
        assert_eq!(a.attacker, b.attacker);
        assert_eq!(a.defender, b.defender);
        let c = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 43)).unwrap();
        assert_ne!(a.attacker, c.attacker);
    }

    proptest! {
        #[test]
        fn disjoint_split_is_a_partition(
            speakers in 1usize..5,
            bona in 0usize..6,
            spoof in 0usize..8,
            seed: u64,
        ) {
            prop_assume!(bona + spoof > 0);
            let records = synthetic_records(speakers, bona, spoof);
            let out = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, seed)).unwrap();
            let att: HashSet<_> = out.attacker.iter().map(|r| r.utt_id.clone()).collect();
            let def: HashSet<_> = out.defender.iter().map(|r| r.utt_id.clone()).collect();
            prop_assert!(att.is_disjoint(&def));
            prop_assert_eq!(att.len() + def.len(), records.len());
        }
    }

    #[test]
    fn pairing_covers_every_spoof_and_respects_speaker() {
        let records = synthetic_records(3, 3, 4);
        let split = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, 5)).unwrap();
        let out = pair_for_enhancement(&split.attacker, 9).unwrap();
        let n_spoof = split
            .attacker
            .iter()
            .filter(|r| r.key == Key::Spoof)
            .count();
        assert_eq!(out.pairs.len(), n_spoof);
        for p in &out.pairs {
            assert_eq!(p.spoof.speaker_id, p.bonafide.speaker_id);
            assert_eq!(p.bonafide.key, Key::Bonafide);
        }
    }

    #[test]
    fn forced_and_degenerate_pairings() {
        // 1 spoof + 1 bona fide for a speaker: exactly that pair.
        let forced = vec![
            TrialRecord {
                speaker_id: "SP".into(),
                utt_id: "B".into(),
                system_id: "-".into(),
                key: Key::Bonafide,
            },
            TrialRecord {
                speaker_id: "SP".into(),
                utt_id: "S".into(),
                system_id: "A01".into(),
                key: Key::Spoof,
            },
        ];
        let out = pair_for_enhancement(&forced, 0).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].bonafide.utt_id, "B");

        // spoofs only: zero pairs plus a warning
        let orphan = vec![TrialRecord {
            speaker_id: "SP".into(),
            utt_id: "S".into(),
            system_id: "A01".into(),
            key: Key::Spoof,
        }];
        let out = pair_for_enhancement(&orphan, 0).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn two_spoofs_three_bona_pairs_stay_in_pool() {
        let mut records = Vec::new();
        for i in 0..3 {
            records.push(TrialRecord {
                speaker_id: "SP".into(),
                utt_id: format!("B{i}"),
                system_id: "-".into(),
                key: Key::Bonafide,
            });
        }
        for i in 0..2 {
            records.push(TrialRecord {
                speaker_id: "SP".into(),
                utt_id: format!("S{i}"),
                system_id: "A01".into(),
                key: Key::Spoof,
            });
        }
        let out = pair_for_enhancement(&records, 3).unwrap();
        assert_eq!(out.pairs.len(), 2);
        for p in &out.pairs {
            assert!(p.bonafide.utt_id.starts_with('B'));
        }
    }
}
