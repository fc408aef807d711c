//! Interaction-log ingestion, feedback labelling, N-core filtering and
//! leave-one-out sequence construction.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::CategoryTriple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackLabel {
    Positive,
    PassiveNegative,
    Discard,
}

impl FeedbackLabel {
    pub fn is_positive(self) -> bool {
        self == FeedbackLabel::Positive
    }

    pub fn is_negative(self) -> bool {
        self == FeedbackLabel::PassiveNegative
    }

    fn code(self) -> char {
        match self {
            FeedbackLabel::Positive => '+',
            FeedbackLabel::PassiveNegative => '-',
            FeedbackLabel::Discard => '?',
        }
    }

    fn from_code(s: &str) -> Option<Self> {
        match s {
            "+" => Some(FeedbackLabel::Positive),
            "-" => Some(FeedbackLabel::PassiveNegative),
            "?" => Some(FeedbackLabel::Discard),
            _ => None,
        }
    }
}

impl fmt::Display for FeedbackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub watch_seconds: f64,
    pub video_seconds: f64,
    pub category: Option<CategoryTriple>,
    /// `None` until [`label_feedback`] has run.
    pub label: Option<FeedbackLabel>,
}

/// Interactions grouped by user (first-appearance order), each user's
/// events stable-sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_count: usize,
    item_count: usize,
}

impl InteractionLog {
    pub fn new(mut interactions: Vec<Interaction>) -> Self {
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        for it in &interactions {
            let next = first_seen.len();
            first_seen.entry(it.user_id.as_str()).or_insert(next);
        }
        let order: Vec<usize> = interactions
            .iter()
            .map(|it| first_seen[it.user_id.as_str()])
            .collect();
        let mut keyed: Vec<(usize, Interaction)> = order.into_iter().zip(interactions.drain(..)).collect();
        // stable: ties keep file order
        keyed.sort_by_key(|(u, it)| (*u, it.timestamp));
        let interactions: Vec<Interaction> = keyed.into_iter().map(|(_, it)| it).collect();
        let mut log = Self {
            interactions,
            user_count: 0,
            item_count: 0,
        };
        log.recount();
        log
    }

    fn recount(&mut self) {
        let users: BTreeSet<&str> = self.interactions.iter().map(|i| i.user_id.as_str()).collect();
        let items: BTreeSet<&str> = self.interactions.iter().map(|i| i.item_id.as_str()).collect();
        self.user_count = users.len();
        self.item_count = items.len();
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Number of distinct users `M`.
    pub fn user_count(&self) -> usize {
        self.user_count
    }

    /// Number of distinct items `N`.
    pub fn item_count(&self) -> usize {
        self.item_count
    }

    /// Contiguous per-user slices in log order.
    pub fn by_user(&self) -> Vec<&[Interaction]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.interactions.len() {
            if i == self.interactions.len()
                || self.interactions[i].user_id != self.interactions[start].user_id
            {
                if i > start {
                    out.push(&self.interactions[start..i]);
                }
                start = i;
            }
        }
        out
    }

    /// Keeps only interactions for which `keep` holds. Order is preserved.
    pub fn filter(&self, mut keep: impl FnMut(&Interaction) -> bool) -> InteractionLog {
        let mut log = InteractionLog {
            interactions: self.interactions.iter().filter(|i| keep(i)).cloned().collect(),
            user_count: 0,
            item_count: 0,
        };
        log.recount();
        log
    }

    /// Drops gray-zone interactions; unlabelled ones are kept.
    pub fn without_discarded(&self) -> InteractionLog {
        self.filter(|i| i.label != Some(FeedbackLabel::Discard))
    }

    pub fn is_labeled(&self) -> bool {
        self.interactions.iter().all(|i| i.label.is_some())
    }

    /// Writes the log in the ingestion CSV schema (default column names).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let to_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record([
            "user_id",
            "item_id",
            "timestamp",
            "watch_seconds",
            "video_seconds",
            "cat_l1",
            "cat_l2",
            "cat_l3",
        ])
        .map_err(to_err)?;
        for it in &self.interactions {
            let (c1, c2, c3) = match &it.category {
                Some(c) => (c.level1.as_str(), c.level2.as_str(), c.level3.as_str()),
                None => ("", "", ""),
            };
            w.write_record([
                it.user_id.as_str(),
                it.item_id.as_str(),
                &it.timestamp.to_string(),
                &it.watch_seconds.to_string(),
                &it.video_seconds.to_string(),
                c1,
                c2,
                c3,
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Column names of the delimiter-separated input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: String,
    pub watch_seconds: String,
    pub video_seconds: String,
    pub cat_l1: String,
    pub cat_l2: String,
    pub cat_l3: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            item_id: "item_id".into(),
            timestamp: "timestamp".into(),
            watch_seconds: "watch_seconds".into(),
            video_seconds: "video_seconds".into(),
            cat_l1: "cat_l1".into(),
            cat_l2: "cat_l2".into(),
            cat_l3: "cat_l3".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub columns: ColumnMapping,
    /// Field delimiter; `None` picks tab for `.tsv` files and comma otherwise.
    pub delimiter: Option<char>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            columns: ColumnMapping::default(),
            delimiter: None,
        }
    }
}

pub fn load_interactions(path: &Path, schema: &Schema) -> Result<InteractionLog> {
    let delimiter = match schema.delimiter {
        Some(d) if d.is_ascii() => d as u8,
        Some(d) => return Err(Error::Schema(format!("delimiter {d:?} is not ASCII"))),
        None if path.extension().is_some_and(|e| e == "tsv") => b'\t',
        None => b',',
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("required column `{name}` is missing")))
    };
    let cols = &schema.columns;
    let c_user = require(&cols.user_id)?;
    let c_item = require(&cols.item_id)?;
    let c_ts = require(&cols.timestamp)?;
    let c_watch = require(&cols.watch_seconds)?;
    let c_video = require(&cols.video_seconds)?;
    let c_cats = match (find(&cols.cat_l1), find(&cols.cat_l2), find(&cols.cat_l3)) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => {
            return Err(Error::Schema(
                "category columns must be given for all three levels or none".into(),
            ))
        }
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize, what: &str| {
            record
                .get(c)
                .map(str::trim)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("missing field `{what}`"),
                })
        };
        let parse_f64 = |c: usize, what: &str| -> Result<f64> {
            let raw = field(c, what)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{what}` is not a number: {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{what}` is not finite"),
                });
            }
            Ok(v)
        };
        let user_id = field(c_user, "user_id")?.to_string();
        let item_id = field(c_item, "item_id")?.to_string();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty user or item id".into(),
            });
        }
        let raw_ts = field(c_ts, "timestamp")?;
        let timestamp: i64 = raw_ts.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`timestamp` is not an integer: {raw_ts:?}"),
        })?;
        let watch_seconds = parse_f64(c_watch, "watch_seconds")?;
        let video_seconds = parse_f64(c_video, "video_seconds")?;
        if watch_seconds < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("watch_seconds must be >= 0, got {watch_seconds}"),
            });
        }
        if video_seconds <= 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("video_seconds must be > 0, got {video_seconds}"),
            });
        }
        let category = match c_cats {
            None => None,
            Some((a, b, c)) => {
                let l1 = field(a, "cat_l1")?;
                let l2 = field(b, "cat_l2")?;
                let l3 = field(c, "cat_l3")?;
                if l1.is_empty() || l2.is_empty() || l3.is_empty() {
                    None
                } else {
                    Some(CategoryTriple::new(l1, l2, l3))
                }
            }
        };
        rows.push(Interaction {
            user_id,
            item_id,
            timestamp,
            watch_seconds,
            video_seconds,
            category,
            label: None,
        });
    }
    Ok(InteractionLog::new(rows))
}

/// Labels every interaction: positive for an effective view, passive
/// negative for a quick skip, discard otherwise.
pub fn label_feedback(log: &InteractionLog, pos_ratio: f64, neg_seconds: f64) -> InteractionLog {
    let mut out = log.clone();
    for it in &mut out.interactions {
        it.label = Some(classify(it.watch_seconds, it.video_seconds, pos_ratio, neg_seconds));
    }
    out
}

pub fn classify(watch: f64, video: f64, pos_ratio: f64, neg_seconds: f64) -> FeedbackLabel {
    if watch >= pos_ratio * video {
        FeedbackLabel::Positive
    } else if watch < neg_seconds {
        FeedbackLabel::PassiveNegative
    } else {
        FeedbackLabel::Discard
    }
}

/// Iteratively removes users and items with fewer than `n` interactions
/// until every remaining user and item has at least `n`.
pub fn apply_n_core(log: &InteractionLog, n: usize) -> Result<InteractionLog> {
    if n == 0 {
        return Err(Error::config("n_core", "must be at least 1"));
    }
    let mut alive: Vec<bool> = vec![true; log.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (it, _) in log.interactions.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_counts.entry(&it.user_id).or_default() += 1;
            *item_counts.entry(&it.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (it, a) in log.interactions.iter().zip(alive.iter_mut()) {
            if *a && (user_counts[it.user_id.as_str()] < n || item_counts[it.item_id.as_str()] < n) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut keep = alive.into_iter();
    let out = log.filter(|_| keep.next().unwrap_or(false));
    if out.is_empty() && !log.is_empty() {
        log::warn!("{n}-core filtering removed every interaction");
    }
    Ok(out)
}

/// Item id ↔ dense index map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemVocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl ItemVocab {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate item id {id:?}")));
            }
        }
        Ok(Self { ids, index })
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Vocabulary(id.to_string()))
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// One user's leave-one-out split.
///
/// `items`/`labels`/`timestamps` form the training portion (everything
/// strictly before the validation target, truncated to the most recent
/// `max_len` events). `pre_test_*` holds the events from the validation
/// target up to, but excluding, the test target.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<usize>,
    pub labels: Vec<FeedbackLabel>,
    pub timestamps: Vec<i64>,
    pub val_target: usize,
    pub val_timestamp: i64,
    pub test_target: usize,
    pub test_timestamp: i64,
    pub pre_test_items: Vec<usize>,
    pub pre_test_labels: Vec<FeedbackLabel>,
    pub pre_test_timestamps: Vec<i64>,
    /// Every item this user interacted with, sorted.
    pub observed: Vec<usize>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Indices of the user's passive negatives in the training portion.
    pub fn negative_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, l)| l.is_negative()).map(|(i, _)| i)
    }

    pub fn has_observed(&self, item: usize) -> bool {
        self.observed.binary_search(&item).is_ok()
    }

    /// Prefix used to predict the test target: training portion followed by
    /// the pre-test events, truncated to the most recent `max_len`.
    pub fn test_prefix(&self, max_len: usize) -> (Vec<usize>, Vec<FeedbackLabel>) {
        let mut items = self.items.clone();
        items.extend(&self.pre_test_items);
        let mut labels = self.labels.clone();
        labels.extend(&self.pre_test_labels);
        let start = items.len().saturating_sub(max_len);
        (items[start..].to_vec(), labels[start..].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropReport {
    pub too_few_positives: Vec<String>,
    pub target_timestamp_ties: Vec<String>,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.too_few_positives.len() + self.target_timestamp_ties.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<UserSequence>,
    pub max_len: usize,
    pub item_vocab: ItemVocab,
}

impl SequenceDataset {
    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }
}

/// Builds per-user leave-one-out sequences from a labelled log.
pub fn build_sequences(log: &InteractionLog, max_len: usize) -> Result<(SequenceDataset, DropReport)> {
    if max_len == 0 {
        return Err(Error::config("max_len", "must be at least 1"));
    }
    if !log.is_labeled() {
        return Err(Error::Contract("build_sequences requires a labelled log".into()));
    }
    let log = log.without_discarded();
    let mut vocab = ItemVocab::default();
    for it in log.interactions() {
        vocab.intern(&it.item_id);
    }

    let mut sequences = Vec::new();
    let mut report = DropReport::default();
    for events in log.by_user() {
        let user_id = events[0].user_id.clone();
        let positives: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == Some(FeedbackLabel::Positive))
            .map(|(i, _)| i)
            .collect();
        if positives.len() < 3 {
            log::warn!("user {user_id} has {} positives; dropped", positives.len());
            report.too_few_positives.push(user_id);
            continue;
        }
        let test_idx = positives[positives.len() - 1];
        let val_idx = positives[positives.len() - 2];
        let (val, test) = (&events[val_idx], &events[test_idx]);
        if val.timestamp >= test.timestamp {
            log::warn!("user {user_id}: validation and test targets share a timestamp; dropped");
            report.target_timestamp_ties.push(user_id);
            continue;
        }
        let train: Vec<&Interaction> = events[..val_idx]
            .iter()
            .filter(|e| e.timestamp < val.timestamp)
            .collect();
        let start = train.len().saturating_sub(max_len);
        let train = &train[start..];
        let pre_test = &events[val_idx..test_idx];

        let idx = |e: &Interaction| vocab.index_of(&e.item_id);
        let label = |e: &Interaction| e.label.expect("labelled");
        let mut observed: Vec<usize> = events.iter().map(idx).collect::<Result<_>>()?;
        observed.sort_unstable();
        observed.dedup();
        sequences.push(UserSequence {
            user_id,
            items: train.iter().map(|e| idx(e)).collect::<Result<_>>()?,
            labels: train.iter().map(|e| label(e)).collect(),
            timestamps: train.iter().map(|e| e.timestamp).collect(),
            val_target: idx(val)?,
            val_timestamp: val.timestamp,
            test_target: idx(test)?,
            test_timestamp: test.timestamp,
            pre_test_items: pre_test.iter().map(idx).collect::<Result<_>>()?,
            pre_test_labels: pre_test.iter().map(label).collect(),
            pre_test_timestamps: pre_test.iter().map(|e| e.timestamp).collect(),
            observed,
        });
    }
    Ok((
        SequenceDataset {
            sequences,
            max_len,
            item_vocab: vocab,
        },
        report,
    ))
}

const DATASET_MAGIC: &str = "#sine-dataset";
const DATASET_VERSION: u32 = 1;

/// Line-oriented, tab-separated dataset file.
///
/// ```text
/// #sine-dataset v1
/// max_len <L>
/// items <N>
/// item <index> <raw id>            (N lines, index order)
/// user <id> <val> <val_ts> <test> <test_ts> <n_train> <n_pre_test> <n_observed>
/// e <item> <+|-> <timestamp>       (n_train lines, then n_pre_test lines)
/// o <item> <item> ...              (observed set)
/// ```
pub fn write_dataset(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{DATASET_MAGIC} v{DATASET_VERSION}").map_err(io)?;
    writeln!(w, "max_len\t{}", ds.max_len).map_err(io)?;
    writeln!(w, "items\t{}", ds.item_vocab.len()).map_err(io)?;
    for (i, id) in ds.item_vocab.ids().iter().enumerate() {
        writeln!(w, "item\t{i}\t{id}").map_err(io)?;
    }
    for s in &ds.sequences {
        writeln!(
            w,
            "user\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.user_id,
            s.val_target,
            s.val_timestamp,
            s.test_target,
            s.test_timestamp,
            s.items.len(),
            s.pre_test_items.len(),
            s.observed.len()
        )
        .map_err(io)?;
        let train = s.items.iter().zip(&s.labels).zip(&s.timestamps);
        let pre = s.pre_test_items.iter().zip(&s.pre_test_labels).zip(&s.pre_test_timestamps);
        for ((item, label), ts) in train.chain(pre) {
            writeln!(w, "e\t{item}\t{label}\t{ts}").map_err(io)?;
        }
        let observed: Vec<String> = s.observed.iter().map(usize::to_string).collect();
        writeln!(w, "o\t{}", observed.join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, Vec<String>)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l.split('\t').map(str::to_string).collect())),
            Some((i, Err(e))) => Err(Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            }),
            None => Err(Error::Format(format!("unexpected end of file, expected {expect}"))),
        }
    };
    let bad = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    fn num<T: std::str::FromStr>(s: Option<&String>, line: usize) -> Result<T> {
        s.and_then(|v| v.parse().ok()).ok_or(Error::Parse {
            line,
            msg: "expected a number".into(),
        })
    }

    let (line, header) = next("header")?;
    if header.len() != 1 || header[0] != format!("{DATASET_MAGIC} v{DATASET_VERSION}") {
        return Err(bad(line, "not a sine dataset v1 file"));
    }
    let (line, f) = next("max_len")?;
    if f.first().map(String::as_str) != Some("max_len") {
        return Err(bad(line, "expected max_len"));
    }
    let max_len: usize = num(f.get(1), line)?;
    let (line, f) = next("items")?;
    if f.first().map(String::as_str) != Some("items") {
        return Err(bad(line, "expected items"));
    }
    let n_items: usize = num(f.get(1), line)?;
    let mut ids = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let (line, f) = next("item")?;
        if f.len() != 3 || f[0] != "item" || num::<usize>(f.get(1), line)? != i {
            return Err(bad(line, "malformed item line"));
        }
        ids.push(f[2].clone());
    }
    let item_vocab = ItemVocab::from_ids(ids)?;

    let mut sequences = Vec::new();
    loop {
        let (line, f) = match next("user") {
            Ok(v) => v,
            Err(Error::Format(_)) => break,
            Err(e) => return Err(e),
        };
        if f.len() == 1 && f[0].is_empty() {
            continue;
        }
        if f.len() != 9 || f[0] != "user" {
            return Err(bad(line, "malformed user line"));
        }
        let check = |item: usize, line: usize| {
            if item < n_items {
                Ok(item)
            } else {
                Err(bad(line, "item index out of range"))
            }
        };
        let n_train: usize = num(f.get(6), line)?;
        let n_pre: usize = num(f.get(7), line)?;
        let n_obs: usize = num(f.get(8), line)?;
        let mut seq = UserSequence {
            user_id: f[1].clone(),
            items: Vec::with_capacity(n_train),
            labels: Vec::with_capacity(n_train),
            timestamps: Vec::with_capacity(n_train),
            val_target: check(num(f.get(2), line)?, line)?,
            val_timestamp: num(f.get(3), line)?,
            test_target: check(num(f.get(4), line)?, line)?,
            test_timestamp: num(f.get(5), line)?,
            pre_test_items: Vec::with_capacity(n_pre),
            pre_test_labels: Vec::with_capacity(n_pre),
            pre_test_timestamps: Vec::with_capacity(n_pre),
            observed: Vec::with_capacity(n_obs),
        };
        for k in 0..n_train + n_pre {
            let (line, f) = next("event")?;
            if f.len() != 4 || f[0] != "e" {
                return Err(bad(line, "malformed event line"));
            }
            let item = check(num(f.get(1), line)?, line)?;
            let label = FeedbackLabel::from_code(&f[2]).ok_or_else(|| bad(line, "bad label"))?;
            let ts: i64 = num(f.get(3), line)?;
            if k < n_train {
                seq.items.push(item);
                seq.labels.push(label);
                seq.timestamps.push(ts);
            } else {
                seq.pre_test_items.push(item);
                seq.pre_test_labels.push(label);
                seq.pre_test_timestamps.push(ts);
            }
        }
        let (line, f) = next("observed")?;
        if f.first().map(String::as_str) != Some("o") {
            return Err(bad(line, "expected observed line"));
        }
        for v in f.iter().skip(1).filter(|v| !v.is_empty()) {
            seq.observed.push(check(num(Some(v), line)?, line)?);
        }
        if seq.observed.len() != n_obs {
            return Err(bad(line, "observed count mismatch"));
        }
        sequences.push(seq);
    }
    Ok(SequenceDataset {
        sequences,
        max_len,
        item_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "user_id,item_id,timestamp,watch_seconds,video_seconds\n";

    fn ev(user: &str, item: &str, ts: i64, label: FeedbackLabel) -> Interaction {
        Interaction {
            user_id: user.into(),
            item_id: item.into(),
            timestamp: ts,
            watch_seconds: 1.0,
            video_seconds: 10.0,
            category: None,
            label: Some(label),
        }
    }

    #[test]
    fn three_rows_two_users() {
        let f = write_tmp(&format!("{HEADER}u1,a,3,10,20\nu2,b,1,1,20\nu1,b,2,5,20\n"));
        let log = load_interactions(f.path(), &Schema::default()).unwrap();
        assert_eq!(log.user_count(), 2);
        assert_eq!(log.item_count(), 2);
        // u1 first, sorted by time
        let ts: Vec<i64> = log.interactions().iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, vec![2, 3, 1]);
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write_tmp(HEADER);
        let log = load_interactions(f.path(), &Schema::default()).unwrap();
        assert_eq!((log.user_count(), log.item_count()), (0, 0));
    }

    #[test]
    fn zero_video_length_is_a_parse_error_with_line() {
        let f = write_tmp(&format!("{HEADER}u1,a,3,10,20\nu1,b,4,1,0\n"));
        match load_interactions(f.path(), &Schema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_number_is_a_parse_error() {
        let f = write_tmp(&format!("{HEADER}u1,a,three,10,20\n"));
        assert!(matches!(
            load_interactions(f.path(), &Schema::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write_tmp("user_id,item_id,timestamp,watch_seconds\nu,a,1,2\n");
        assert!(matches!(
            load_interactions(f.path(), &Schema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn custom_mapping_and_tsv() {
        let mut f = tempfile::Builder::new().suffix(".tsv").tempfile().unwrap();
        f.write_all(b"uid\tvid\tts\tplay\tdur\nx\ty\t5\t1.5\t9\n").unwrap();
        let schema = Schema {
            columns: ColumnMapping {
                user_id: "uid".into(),
                item_id: "vid".into(),
                timestamp: "ts".into(),
                watch_seconds: "play".into(),
                video_seconds: "dur".into(),
                ..ColumnMapping::default()
            },
            delimiter: None,
        };
        let log = load_interactions(f.path(), &schema).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.interactions()[0].watch_seconds, 1.5);
    }

    #[test]
    fn categories_are_parsed_when_present() {
        let f = write_tmp(
            "user_id,item_id,timestamp,watch_seconds,video_seconds,cat_l1,cat_l2,cat_l3\n\
             u,a,1,5,10,c1,c1.1,c1.1.1\nu,b,2,5,10,,,\n",
        );
        let log = load_interactions(f.path(), &Schema::default()).unwrap();
        assert_eq!(
            log.interactions()[0].category,
            Some(CategoryTriple::new("c1", "c1.1", "c1.1.1"))
        );
        assert_eq!(log.interactions()[1].category, None);
    }

    #[test]
    fn timestamp_ties_keep_file_order() {
        let f = write_tmp(&format!("{HEADER}u,first,5,1,2\nu,second,5,1,2\nu,zero,1,1,2\n"));
        let log = load_interactions(f.path(), &Schema::default()).unwrap();
        let items: Vec<&str> = log.interactions().iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(items, ["zero", "first", "second"]);
    }

    #[test]
    fn labelling_rules() {
        assert_eq!(classify(30.0, 40.0, 0.5, 3.0), FeedbackLabel::Positive);
        assert_eq!(classify(2.0, 60.0, 0.5, 3.0), FeedbackLabel::PassiveNegative);
        assert_eq!(classify(10.0, 60.0, 0.5, 3.0), FeedbackLabel::Discard);
        // a short video watched to half counts as positive even under 3 s
        assert_eq!(classify(2.0, 4.0, 0.5, 3.0), FeedbackLabel::Positive);
    }

    #[test]
    fn n_core_unchanged_at_fixed_point() {
        let mut rows = Vec::new();
        for u in ["u1", "u2"] {
            for i in ["a", "b"] {
                rows.push(ev(u, i, 0, FeedbackLabel::Positive));
            }
        }
        let log = InteractionLog::new(rows);
        assert_eq!(apply_n_core(&log, 2).unwrap(), log);
    }

    #[test]
    fn n_core_removes_singleton_user() {
        let mut rows = Vec::new();
        for u in ["u1", "u2"] {
            for i in ["a", "b"] {
                rows.push(ev(u, i, 0, FeedbackLabel::Positive));
            }
        }
        rows.push(ev("lonely", "a", 0, FeedbackLabel::Positive));
        let log = InteractionLog::new(rows);
        let out = apply_n_core(&log, 2).unwrap();
        assert_eq!(out.user_count(), 2);
        assert_eq!(out.len(), 4);
        assert!(out.interactions().iter().all(|i| i.user_id != "lonely"));
    }

    #[test]
    fn n_core_chain_cascades_to_empty() {
        // u1:{a,b,c} u2:{a,b,d} u3:{a,c,d} u4:{d}
        // pass 1 drops u4 (1), b (2), c (2); then u1..u3 and d fall below 3,
        // which strands a.
        let edges = [
            ("u1", "a"),
            ("u1", "b"),
            ("u1", "c"),
            ("u2", "a"),
            ("u2", "b"),
            ("u2", "d"),
            ("u3", "a"),
            ("u3", "c"),
            ("u3", "d"),
            ("u4", "d"),
        ];
        let log = InteractionLog::new(
            edges.iter().map(|(u, i)| ev(u, i, 0, FeedbackLabel::Positive)).collect(),
        );
        let out = apply_n_core(&log, 3).unwrap();
        assert!(out.is_empty());
        assert_eq!((out.user_count(), out.item_count()), (0, 0));
        // 2-core only loses u4
        let two = apply_n_core(&log, 2).unwrap();
        assert_eq!(two.len(), 9);
        assert_eq!(two.user_count(), 3);
    }

    #[test]
    fn n_core_rejects_zero() {
        assert!(apply_n_core(&InteractionLog::default(), 0).is_err());
    }

    #[test]
    fn split_rule_with_interleaved_negative() {
        use FeedbackLabel::*;
        let log = InteractionLog::new(vec![
            ev("u", "a", 1, Positive),
            ev("u", "x", 2, PassiveNegative),
            ev("u", "b", 3, Positive),
            ev("u", "c", 4, Positive),
        ]);
        let (ds, report) = build_sequences(&log, 50).unwrap();
        assert_eq!(report.total(), 0);
        let s = &ds.sequences[0];
        let v = &ds.item_vocab;
        assert_eq!(s.items, vec![v.index_of("a").unwrap(), v.index_of("x").unwrap()]);
        assert_eq!(s.labels, vec![Positive, PassiveNegative]);
        assert_eq!(s.val_target, v.index_of("b").unwrap());
        assert_eq!(s.test_target, v.index_of("c").unwrap());
        assert_eq!(s.pre_test_items, vec![v.index_of("b").unwrap()]);
    }

    #[test]
    fn two_positive_user_is_dropped() {
        use FeedbackLabel::*;
        let log = InteractionLog::new(vec![
            ev("u", "a", 1, Positive),
            ev("u", "x", 2, PassiveNegative),
            ev("u", "b", 3, Positive),
        ]);
        let (ds, report) = build_sequences(&log, 50).unwrap();
        assert!(ds.sequences.is_empty());
        assert_eq!(report.too_few_positives, vec!["u".to_string()]);
    }

    #[test]
    fn long_history_is_truncated_to_most_recent() {
        let mut rows: Vec<Interaction> = (0..60)
            .map(|t| ev("u", &format!("i{t}"), t, FeedbackLabel::Positive))
            .collect();
        rows.push(ev("u", "val", 100, FeedbackLabel::Positive));
        rows.push(ev("u", "test", 101, FeedbackLabel::Positive));
        let (ds, _) = build_sequences(&InteractionLog::new(rows), 50).unwrap();
        let s = &ds.sequences[0];
        assert_eq!(s.items.len(), 50);
        assert_eq!(s.timestamps[0], 10);
        assert_eq!(ds.item_vocab.id_of(s.items[0]), Some("i10"));
    }

    #[test]
    fn discards_never_reach_sequences() {
        use FeedbackLabel::*;
        let log = InteractionLog::new(vec![
            ev("u", "a", 1, Positive),
            ev("u", "gray", 2, Discard),
            ev("u", "b", 3, Positive),
            ev("u", "c", 4, Positive),
        ]);
        let (ds, _) = build_sequences(&log, 50).unwrap();
        assert_eq!(ds.sequences[0].items.len(), 1);
        assert!(ds.item_vocab.index_of("gray").is_err());
    }

    #[test]
    fn unlabelled_log_is_rejected() {
        let mut e = ev("u", "a", 1, FeedbackLabel::Positive);
        e.label = None;
        assert!(build_sequences(&InteractionLog::new(vec![e]), 5).is_err());
    }

    #[test]
    fn dataset_file_round_trips() {
        use FeedbackLabel::*;
        let log = InteractionLog::new(vec![
            ev("u1", "a", 1, Positive),
            ev("u1", "x", 2, PassiveNegative),
            ev("u1", "b", 3, Positive),
            ev("u1", "y", 4, PassiveNegative),
            ev("u1", "c", 5, Positive),
            ev("u2", "c", 1, Positive),
            ev("u2", "a", 2, Positive),
            ev("u2", "b", 3, Positive),
        ]);
        let (ds, _) = build_sequences(&log, 50).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, f.path()).unwrap();
        assert_eq!(read_dataset(f.path()).unwrap(), ds);
    }

    #[test]
    fn dataset_reader_rejects_wrong_version() {
        let f = write_tmp("#sine-dataset v9\nmax_len\t5\nitems\t0\n");
        assert!(read_dataset(f.path()).is_err());
    }
}
