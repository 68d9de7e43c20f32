use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamming::{GalleryIndex, HashCode, QueryFilter, StageCodes};

/// Predicted query difficulty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitLabel {
    Easy,
    Skip,
    Hard,
}

impl ExitLabel {
    pub const ALL: [ExitLabel; 3] = [ExitLabel::Easy, ExitLabel::Skip, ExitLabel::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitLabel::Easy => "easy",
            ExitLabel::Skip => "skip",
            ExitLabel::Hard => "hard",
        }
    }

    /// Easy and skip queries leave at the first exit.
    pub fn exits_early(self) -> bool {
        self != ExitLabel::Hard
    }
}

impl std::str::FromStr for ExitLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Policy(format!("unknown exit label {s:?}")))
    }
}

/// Number of adjacent unequal pairs.
pub fn count_flips(checks: &[bool]) -> usize {
    checks.windows(2).filter(|w| w[0] != w[1]).count()
}

/// `flips > 6` → skip, `flips > 2` → hard, otherwise easy; a sequence that
/// was never correct is skip.
pub fn label_from_flips(checks: &[bool]) -> ExitLabel {
    let flips = count_flips(checks);
    if flips > 6 {
        ExitLabel::Skip
    } else if flips > 2 {
        ExitLabel::Hard
    } else if checks.iter().all(|c| !c) {
        ExitLabel::Skip
    } else {
        ExitLabel::Easy
    }
}

/// Leave-one-out top-1 correctness of every sample against the rest of the
/// split. Samples whose identity has no other member get `None`.
pub fn leave_one_out_top1(codes: &[HashCode], ids: &[u32]) -> Result<Vec<Option<bool>>> {
    if codes.len() != ids.len() {
        return Err(Error::Dimension(format!("{} codes for {} ids", codes.len(), ids.len())));
    }
    let stage = codes.first().map(HashCode::stage).ok_or(Error::Retrieval("no codes".into()))?;
    let index = GalleryIndex::new(vec![StageCodes::new(stage, codes.to_vec())?], ids.to_vec(), vec![0; ids.len()])?;
    let mut per_id: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in ids {
        *per_id.entry(id).or_default() += 1;
    }
    codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            if per_id[&ids[i]] < 2 {
                return Ok(None);
            }
            let filter = QueryFilter { exclude_position: Some(i), ..QueryFilter::default() };
            let top = index.topk_filtered(code, 1, &filter)?;
            Ok(Some(top[0].id == ids[i]))
        })
        .collect()
}

/// Top-1 correctness of every training sample at each checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlipTable {
    pub epochs: Vec<usize>,
    /// Training-split positions with a valid history.
    pub samples: Vec<usize>,
    pub checks: Vec<Vec<bool>>,
}

impl FlipTable {
    /// Appends one checkpoint. The first call fixes the sample set; samples
    /// with `None` are excluded.
    pub fn record_checkpoint(&mut self, epoch: usize, correct: &[Option<bool>], interval: usize) -> Result<()> {
        if interval == 0 || !epoch.is_multiple_of(interval) {
            return Err(Error::Policy(format!("epoch {epoch} is not a multiple of the checkpoint interval {interval}")));
        }
        if self.epochs.last().is_some_and(|&e| e >= epoch) {
            return Err(Error::Policy(format!("checkpoint epoch {epoch} recorded out of order")));
        }
        if self.epochs.is_empty() {
            let excluded = correct.iter().filter(|c| c.is_none()).count();
            if excluded > 0 {
                log::warn!("{excluded} training samples have no other sample of their identity; excluded from flip statistics");
            }
            self.samples = (0..correct.len()).filter(|&i| correct[i].is_some()).collect();
            self.checks = vec![Vec::new(); self.samples.len()];
        }
        for (row, &s) in self.checks.iter_mut().zip(&self.samples) {
            let c = correct
                .get(s)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Policy(format!("sample {s} missing from checkpoint {epoch}")))?;
            row.push(c);
        }
        self.epochs.push(epoch);
        Ok(())
    }

    pub fn labels(&self) -> Vec<ExitLabel> {
        self.checks.iter().map(|c| label_from_flips(c)).collect()
    }

    pub fn label_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for l in self.labels() {
            counts[l.index()] += 1;
        }
        counts
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("epochs\t");
        out += &self.epochs.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        out += "\nsample\tchecks\tflips\tlabel\n";
        for (s, c) in self.samples.iter().zip(&self.checks) {
            let bits: String = c.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let _ = writeln!(out, "{s}\t{bits}\t{}\t{}", count_flips(c), label_from_flips(c).name());
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut lines = text.lines();
        let epochs_line = lines.next().ok_or_else(|| bad("empty flip table".into()))?;
        let epochs_str = epochs_line.strip_prefix("epochs\t").ok_or_else(|| bad("missing epochs line".into()))?;
        let epochs = if epochs_str.is_empty() {
            Vec::new()
        } else {
            epochs_str.split(',').map(|e| e.parse().map_err(|_| bad(format!("bad epoch {e:?}")))).collect::<Result<_>>()?
        };
        if lines.next() != Some("sample\tchecks\tflips\tlabel") {
            return Err(bad("missing column header".into()));
        }
        let mut table = FlipTable { epochs, ..Default::default() };
        for (n, line) in lines.enumerate() {
            let mut cols = line.split('\t');
            let sample = cols.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("row {n}: bad sample id")))?;
            let bits = cols.next().ok_or_else(|| bad(format!("row {n}: missing checks")))?;
            let checks: Vec<bool> = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(bad(format!("row {n}: bad check {c:?}"))),
                })
                .collect::<Result<_>>()?;
            if checks.len() != table.epochs.len() {
                return Err(bad(format!("row {n}: {} checks for {} epochs", checks.len(), table.epochs.len())));
            }
            table.samples.push(sample);
            table.checks.push(checks);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.to_path_buf(), hint: "run `train` or `collect-flips` first".into() });
        }
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn printed_sequences() {
        let easy = seq("0011111111");
        let hard = seq("0011000111");
        assert_eq!((count_flips(&easy), label_from_flips(&easy)), (1, ExitLabel::Easy));
        assert_eq!((count_flips(&hard), label_from_flips(&hard)), (3, ExitLabel::Hard));
    }

    #[test]
    fn boundaries() {
        let two = seq("1100111111");
        let six = seq("1010101111");
        let seven = seq("0101010111");
        assert_eq!((count_flips(&two), label_from_flips(&two)), (2, ExitLabel::Easy));
        assert_eq!((count_flips(&six), label_from_flips(&six)), (6, ExitLabel::Hard));
        assert_eq!((count_flips(&seven), label_from_flips(&seven)), (7, ExitLabel::Skip));
        assert_eq!(label_from_flips(&seq("0101010101")), ExitLabel::Skip);
    }

    #[test]
    fn never_correct_is_skip() {
        assert_eq!(label_from_flips(&[false; 10]), ExitLabel::Skip);
        assert_eq!(label_from_flips(&[true; 10]), ExitLabel::Easy);
    }

    #[test]
    fn leave_one_out_constant_codes_break_ties_by_position() {
        let c = HashCode::pack(&[1.0; 8], 4).unwrap();
        let codes = vec![c; 5];
        // top-1 is position 0 for everyone except sample 0, whose top-1 is 1
        let got = leave_one_out_top1(&codes, &[1, 0, 1, 2, 0]).unwrap();
        assert_eq!(got, vec![Some(false), Some(false), Some(true), None, Some(false)]);
        let got = leave_one_out_top1(&codes, &[0, 0, 1, 1, 1]).unwrap();
        assert_eq!(got, vec![Some(true), Some(true), Some(false), Some(false), Some(false)]);
    }

    #[test]
    fn record_excludes_singletons_and_checks_interval() {
        let mut t = FlipTable::default();
        assert!(t.record_checkpoint(5, &[Some(true)], 10).is_err());
        t.record_checkpoint(10, &[Some(true), None, Some(false)], 10).unwrap();
        t.record_checkpoint(20, &[Some(true), None, Some(true)], 10).unwrap();
        assert_eq!(t.samples, vec![0, 2]);
        assert_eq!(t.checks, vec![vec![true, true], vec![false, true]]);
        assert!(t.record_checkpoint(20, &[Some(true), None, Some(true)], 10).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut t = FlipTable::default();
        for (e, c) in [(10, [Some(true), Some(false)]), (20, [Some(false), Some(false)])] {
            t.record_checkpoint(e, &c, 10).unwrap();
        }
        let p = Path::new("flips.tsv");
        assert_eq!(FlipTable::parse(&t.to_text(), p).unwrap(), t);
        assert!(matches!(FlipTable::load(Path::new("/nonexistent/flips.tsv")), Err(Error::MissingArtifact { .. })));
    }

    proptest! {
        #[test]
        fn flips_bounded(checks in prop::collection::vec(any::<bool>(), 1..40)) {
            let f = count_flips(&checks);
            prop_assert!(f < checks.len());
            let rev: Vec<bool> = checks.iter().rev().copied().collect();
            prop_assert_eq!(count_flips(&rev), f);
        }
    }
}
