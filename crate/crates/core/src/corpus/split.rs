use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    CrossCorpus,
    Loso,
}

/// Sample ids per partition. `held_out` is the test corpus or test speaker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub held_out: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    /// Checks id disjointness, that every id resolves, and the protocol's
    /// grouping constraint (corpus or speaker never spans train and test).
    pub fn validate(&self, samples: &[Sample]) -> Result<(), CorpusError> {
        let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let lookup = |ids: &[String]| -> Result<Vec<&Sample>, CorpusError> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| CorpusError::InvalidPlan(format!("unknown id `{id}`")))
                })
                .collect()
        };
        let train = lookup(&self.train)?;
        let val = lookup(&self.val)?;
        let test = lookup(&self.test)?;

        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(CorpusError::InvalidPlan(format!("id `{id}` in two partitions")));
            }
        }

        let group = |s: &Sample| match self.protocol {
            Protocol::CrossCorpus => s.corpus_id.clone(),
            Protocol::Loso => s.speaker_id.clone(),
        };
        let test_groups: HashSet<String> = test.iter().map(|s| group(s)).collect();
        let test_ids: HashSet<&str> = test.iter().map(|s| s.id.as_str()).collect();
        for s in train.iter().chain(&val) {
            if test_groups.contains(&group(s)) {
                return Err(CorpusError::InvalidPlan(format!(
                    "group `{}` of `{}` is also in test",
                    group(s),
                    s.id
                )));
            }
            if let Some(src) = &s.augmented_from {
                if test_ids.contains(src.as_str()) {
                    return Err(CorpusError::InvalidPlan(format!(
                        "`{}` is derived from test sample `{src}`",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn ids_where(samples: &[Sample], pred: impl Fn(&Sample) -> bool) -> Vec<String> {
    samples.iter().filter(|s| pred(s)).map(|s| s.id.clone()).collect()
}

/// Routes samples by corpus: `train_corpora`, `val_corpora`, `test_corpus`.
pub fn split_cross_corpus(
    samples: &[Sample],
    train_corpora: &[&str],
    val_corpora: &[&str],
    test_corpus: &str,
) -> Result<SplitPlan, CorpusError> {
    let present: HashSet<&str> = samples.iter().map(|s| s.corpus_id.as_str()).collect();
    let mut named = HashSet::new();
    for &c in train_corpora.iter().chain(val_corpora).chain([test_corpus].iter()) {
        if !present.contains(c) {
            return Err(CorpusError::UnknownCorpus(c.into()));
        }
        if !named.insert(c) {
            return Err(CorpusError::Overlap(c.into()));
        }
    }
    let plan = SplitPlan {
        protocol: Protocol::CrossCorpus,
        held_out: test_corpus.into(),
        train: ids_where(samples, |s| train_corpora.contains(&s.corpus_id.as_str())),
        val: ids_where(samples, |s| val_corpora.contains(&s.corpus_id.as_str())),
        test: ids_where(samples, |s| s.corpus_id == test_corpus),
    };
    plan.validate(samples)?;
    Ok(plan)
}

/// One plan per speaker (sorted by id). The validation speaker is the next
/// speaker in sorted order, wrapping around; with two speakers it is empty.
pub fn split_loso(samples: &[Sample]) -> Result<Vec<SplitPlan>, CorpusError> {
    let speakers: Vec<&str> = samples
        .iter()
        .map(|s| s.speaker_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() < 2 {
        return Err(CorpusError::TooFewSpeakers(speakers.len()));
    }
    let n = speakers.len();
    let mut plans = Vec::with_capacity(n);
    for (i, &test) in speakers.iter().enumerate() {
        let val = if n > 2 { Some(speakers[(i + 1) % n]) } else { None };
        let plan = SplitPlan {
            protocol: Protocol::Loso,
            held_out: test.into(),
            train: ids_where(samples, |s| {
                s.speaker_id != test && Some(s.speaker_id.as_str()) != val
            }),
            val: ids_where(samples, |s| Some(s.speaker_id.as_str()) == val),
            test: ids_where(samples, |s| s.speaker_id == test),
        };
        plan.validate(samples)?;
        plans.push(plan);
    }
    Ok(plans)
}
