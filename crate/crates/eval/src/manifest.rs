//! Labeled image manifests: `id,label,source,split` CSV files.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Landslide,
    NotLandslide,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Landslide, Label::NotLandslide];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Landslide => "landslide",
            Label::NotLandslide => "not_landslide",
        }
    }

    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Landslide)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "landslide" => Ok(Label::Landslide),
            "not_landslide" => Ok(Label::NotLandslide),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Google,
    Twitter,
    Bgs,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Google, Source::Twitter, Source::Bgs];

    pub fn display_name(&self) -> &'static str {
        match self {
            Source::Google => "Google",
            Source::Twitter => "Twitter",
            Source::Bgs => "BGS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub source: Source,
    pub split: Split,
}

/// A manifest with unique ids. Since each entry carries exactly one split,
/// unique ids also make the splits disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledManifest {
    entries: Vec<ManifestEntry>,
}

impl LabeledManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.id.is_empty() {
                return Err(EvalError::InvalidManifest("empty id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(EvalError::InvalidManifest(format!("duplicate id '{}'", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        Self::new(read_entries(reader)?)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_entries(&self.entries, writer)
    }
}

fn read_entries<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn write_entries<W: Write>(entries: &[ManifestEntry], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if entries.is_empty() {
        wtr.write_record(["id", "label", "source", "split"])?;
    }
    for e in entries {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One split after minority-class oversampling. Ids repeat for resampled
/// entries, so this is not a [`LabeledManifest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedSplit {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl BalancedSplit {
    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_entries(&self.entries, writer)
    }
}

/// Oversamples the minority class of `split` with replacement until both
/// classes have the majority count.
///
/// The output lists the split's entries once each in manifest order,
/// followed by the extra minority draws. Every minority entry therefore
/// appears at least once and majority entries exactly once. Draws come from
/// a ChaCha8 stream seeded with `seed`, so output is reproducible.
pub fn balanced_manifest(m: &LabeledManifest, split: Split, seed: u64) -> Result<BalancedSplit> {
    let in_split: Vec<&ManifestEntry> = m.entries.iter().filter(|e| e.split == split).collect();
    let (pos, neg): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) =
        in_split.iter().partition(|e| e.label == Label::Landslide);
    if pos.is_empty() {
        return Err(EvalError::MissingClass("landslide", split.as_str()));
    }
    if neg.is_empty() {
        return Err(EvalError::MissingClass("not_landslide", split.as_str()));
    }

    let (minority, majority) = if pos.len() <= neg.len() { (&pos, &neg) } else { (&neg, &pos) };
    let extra = majority.len() - minority.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<ManifestEntry> = in_split.iter().map(|e| (*e).clone()).collect();
    entries.reserve(extra);
    for _ in 0..extra {
        let idx = rng.random_range(0..minority.len());
        entries.push(minority[idx].clone());
    }
    Ok(BalancedSplit { split, entries })
}

/// Contingency counts of a manifest by (source, split) and (label, split).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestStats {
    by_source: [[u64; 3]; 3],
    by_label: [[u64; 3]; 2],
}

impl ManifestStats {
    pub fn source_count(&self, source: Source, split: Split) -> u64 {
        self.by_source[source as usize][split.index()]
    }

    pub fn label_count(&self, label: Label, split: Split) -> u64 {
        self.by_label[label as usize][split.index()]
    }

    pub fn source_total(&self, source: Source) -> u64 {
        self.by_source[source as usize].iter().sum()
    }

    pub fn label_total(&self, label: Label) -> u64 {
        self.by_label[label as usize].iter().sum()
    }

    pub fn split_total(&self, split: Split) -> u64 {
        self.by_source.iter().map(|row| row[split.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        Split::ALL.iter().map(|s| self.split_total(*s)).sum()
    }
}

pub fn manifest_stats(m: &LabeledManifest) -> ManifestStats {
    let mut stats = ManifestStats::default();
    for e in &m.entries {
        stats.by_source[e.source as usize][e.split.index()] += 1;
        stats.by_label[e.label as usize][e.split.index()] += 1;
    }
    stats
}

impl fmt::Display for ManifestStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = format!(
            "{:<14}{:>10}{:>12}{:>8}{:>8}",
            "", "Training", "Validation", "Test", "Total"
        );
        let totals = format!(
            "{:<14}{:>10}{:>12}{:>8}{:>8}",
            "Total",
            self.split_total(Split::Train),
            self.split_total(Split::Val),
            self.split_total(Split::Test),
            self.total()
        );
        writeln!(f, "{header}")?;
        for s in Source::ALL {
            writeln!(
                f,
                "{:<14}{:>10}{:>12}{:>8}{:>8}",
                s.display_name(),
                self.source_count(s, Split::Train),
                self.source_count(s, Split::Val),
                self.source_count(s, Split::Test),
                self.source_total(s)
            )?;
        }
        writeln!(f, "{totals}")?;
        writeln!(f)?;
        writeln!(f, "{header}")?;
        for l in Label::ALL {
            let name = match l {
                Label::Landslide => "Landslide",
                Label::NotLandslide => "Not-landslide",
            };
            writeln!(
                f,
                "{:<14}{:>10}{:>12}{:>8}{:>8}",
                name,
                self.label_count(l, Split::Train),
                self.label_count(l, Split::Val),
                self.label_count(l, Split::Test),
                self.label_total(l)
            )?;
        }
        writeln!(f, "{totals}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Label, split: Split) -> ManifestEntry {
        ManifestEntry { id: id.into(), label, source: Source::Twitter, split }
    }

    fn split_fixture(pos: usize, neg: usize) -> LabeledManifest {
        let mut v = Vec::new();
        for i in 0..pos {
            v.push(entry(&format!("p{i}"), Label::Landslide, Split::Train));
        }
        for i in 0..neg {
            v.push(entry(&format!("n{i}"), Label::NotLandslide, Split::Train));
        }
        v.push(entry("v0", Label::Landslide, Split::Val));
        LabeledManifest::new(v).unwrap()
    }

    #[test]
    fn oversamples_to_majority() {
        let b = balanced_manifest(&split_fixture(3, 11), Split::Train, 7).unwrap();
        assert_eq!(b.count(Label::Landslide), 11);
        assert_eq!(b.count(Label::NotLandslide), 11);
        assert!(b.entries.iter().all(|e| e.split == Split::Train));
    }

    #[test]
    fn balanced_input_is_a_no_op() {
        let m = split_fixture(10, 10);
        let b = balanced_manifest(&m, Split::Train, 1).unwrap();
        let mut got: Vec<_> = b.entries.iter().map(|e| e.id.clone()).collect();
        let mut want: Vec<_> = m
            .entries()
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.id.clone())
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn missing_class_is_an_error() {
        let m = split_fixture(0, 4);
        assert!(matches!(
            balanced_manifest(&m, Split::Train, 0),
            Err(EvalError::MissingClass("landslide", "train"))
        ));
        assert!(balanced_manifest(&m, Split::Test, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let v = vec![entry("a", Label::Landslide, Split::Train), entry("a", Label::Landslide, Split::Val)];
        assert!(LabeledManifest::new(v).is_err());
    }

    #[test]
    fn empty_manifest_stats_are_zero() {
        let s = manifest_stats(&LabeledManifest::default());
        assert_eq!(s.total(), 0);
        assert_eq!(s.source_count(Source::Bgs, Split::Test), 0);
        assert_eq!(s.label_total(Label::Landslide), 0);
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let text = "id,label,source,split\na.jpg,landslide,google,train\nb.jpg,not_landslide,bgs,test\n";
        let m = LabeledManifest::from_csv(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn bad_label_in_csv() {
        let text = "id,label,source,split\na,rockfall,google,train\n";
        assert!(LabeledManifest::from_csv(text.as_bytes()).is_err());
    }
}
