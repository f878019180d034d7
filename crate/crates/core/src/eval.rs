//! Answer and extraction metrics: normalized exact match, unigram/bigram
//! overlap and longest-common-subsequence F-scores, plus the per-item /
//! aggregate bookkeeping the runner reports.
//!
//! Conventions, fixed here and relied on by the report format: scores are in
//! [0,1]; multi-reference scoring takes the best F1 (first on ties); two empty
//! token lists score 1.0, exactly one empty scores 0.0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::record::{CellValue, RecordSet};

/// Characters stripped from both ends of a normalized answer (after
/// whitespace collapsing): sentence punctuation and straight/smart quotes.
const STRIP_CHARS: &[char] =
    &['.', ',', ':', ';', '!', '?', '"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Lowercase, collapse runs of whitespace to single spaces, trim, then strip
/// punctuation/quotes from the ends. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_whitespace() || STRIP_CHARS.contains(&c))
        .to_string()
}

pub fn tokenize(text: &str) -> Vec<String> {
    normalize_answer(text).split_whitespace().map(str::to_string).collect()
}

/// 1 when the normalized prediction equals any normalized gold, else 0.
pub fn exact_match(prediction: &str, golds: &[String]) -> u8 {
    let normalized = normalize_answer(prediction);
    u8::from(golds.iter().any(|gold| normalize_answer(gold) == normalized))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Rouge {
    fn from_counts(overlap: usize, pred_total: usize, ref_total: usize) -> Rouge {
        if pred_total == 0 && ref_total == 0 {
            return Rouge { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        if pred_total == 0 || ref_total == 0 {
            return Rouge { precision: 0.0, recall: 0.0, f1: 0.0 };
        }
        let precision = overlap as f64 / pred_total as f64;
        let recall = overlap as f64 / ref_total as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Rouge { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window.join("\u{1f}")).or_insert(0) += 1;
    }
    counts
}

fn rouge_n_single(pred: &[String], reference: &[String], n: usize) -> Rouge {
    let pred_counts = ngram_counts(pred, n);
    let ref_counts = ngram_counts(reference, n);
    let pred_total: usize = pred_counts.values().sum();
    let ref_total: usize = ref_counts.values().sum();
    let overlap: usize = pred_counts
        .iter()
        .map(|(gram, count)| count.min(ref_counts.get(gram).unwrap_or(&0)))
        .sum();
    Rouge::from_counts(overlap, pred_total, ref_total)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // One-row dynamic program; O(|a|*|b|) time, O(|b|) space.
    let mut row = vec![0usize; b.len() + 1];
    for token_a in a {
        let mut prev_diag = 0;
        for (j, token_b) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if token_a == token_b { prev_diag + 1 } else { up.max(row[j]) };
            prev_diag = up;
        }
    }
    row[b.len()]
}

fn rouge_l_single(pred: &[String], reference: &[String]) -> Rouge {
    if pred.is_empty() || reference.is_empty() {
        return Rouge::from_counts(0, pred.len(), reference.len());
    }
    let lcs = lcs_len(pred, reference);
    Rouge::from_counts(lcs, pred.len(), reference.len())
}

fn best_over_references(
    pred: &str,
    references: &[String],
    score: impl Fn(&[String], &[String]) -> Rouge,
) -> Rouge {
    let pred_tokens = tokenize(pred);
    let mut best: Option<Rouge> = None;
    for reference in references {
        let ref_tokens = tokenize(reference);
        let candidate = score(&pred_tokens, &ref_tokens);
        let better = match &best {
            None => true,
            Some(current) => candidate.f1 > current.f1, // strict: first wins ties
        };
        if better {
            best = Some(candidate);
        }
    }
    best.unwrap_or(Rouge { precision: 0.0, recall: 0.0, f1: 0.0 })
}

/// Clipped n-gram overlap F-score, best reference by F1.
pub fn rouge_n(prediction: &str, references: &[String], n: usize) -> Rouge {
    best_over_references(prediction, references, |p, r| rouge_n_single(p, r, n))
}

/// Longest-common-subsequence F-score over tokens, best reference by F1.
pub fn rouge_l(prediction: &str, references: &[String]) -> Rouge {
    best_over_references(prediction, references, rouge_l_single)
}

/// Curated reference table for extraction-quality scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTable {
    pub slots: Vec<String>,
    /// Rectangular: every row has exactly `slots.len()` cells.
    pub rows: Vec<Vec<CellValue>>,
}

impl GoldTable {
    pub fn is_rectangular(&self) -> bool {
        self.rows.iter().all(|row| row.len() == self.slots.len())
    }
}

/// Render records/gold as comparable text: one line per row, `slot: value`
/// pairs in slot order, null cells skipped.
pub fn linearize_rows(slot_names: &[String], rows: &[Vec<CellValue>]) -> String {
    rows.iter()
        .map(|row| {
            slot_names
                .iter()
                .zip(row.iter())
                .filter(|(_, cell)| !cell.is_null())
                .map(|(slot, cell)| format!("{slot}: {}", cell.display_text()))
                .collect::<Vec<_>>()
                .join("; ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn linearize_record_set(records: &RecordSet) -> String {
    let slot_names: Vec<String> =
        records.schema.slots.iter().map(|s| s.name.clone()).collect();
    let rows: Vec<Vec<CellValue>> = records
        .rows
        .iter()
        .map(|row| slot_names.iter().map(|slot| row.get(slot).clone()).collect())
        .collect();
    linearize_rows(&slot_names, &rows)
}

/// ROUGE-1/ROUGE-L F1 of the linearized extraction against the linearized
/// gold table. `None` only when the gold side linearizes to nothing (no
/// reference to score against); an empty extraction against a real gold is a
/// genuine zero.
pub fn extraction_quality(records: &RecordSet, gold: &GoldTable) -> Option<(f64, f64)> {
    let pred = linearize_record_set(records);
    let gold_text = linearize_rows(&gold.slots, &gold.rows);
    if tokenize(&gold_text).is_empty() {
        return None;
    }
    let refs = [gold_text];
    Some((rouge_n(&pred, &refs, 1).f1, rouge_l(&pred, &refs).f1))
}

/// Per-task scores for one repeat. Metric fields are `None` when the run
/// aborted (the error note says why) or, for the extraction pair, when there
/// was no gold table / no cache to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub task_id: String,
    pub answer: Option<String>,
    pub em: Option<u8>,
    pub rouge1_f: Option<f64>,
    pub rouge_l_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ext_rouge1_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ext_rouge_l_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ItemMetrics {
    pub fn scored(task_id: &str, answer: &str, golds: &[String]) -> ItemMetrics {
        ItemMetrics {
            task_id: task_id.to_string(),
            answer: Some(answer.to_string()),
            em: Some(exact_match(answer, golds)),
            rouge1_f: Some(rouge_n(answer, golds, 1).f1),
            rouge_l_f: Some(rouge_l(answer, golds).f1),
            ext_rouge1_f: None,
            ext_rouge_l_f: None,
            error: None,
        }
    }

    pub fn failed(task_id: &str, error: String) -> ItemMetrics {
        ItemMetrics {
            task_id: task_id.to_string(),
            answer: None,
            em: None,
            rouge1_f: None,
            rouge_l_f: None,
            ext_rouge1_f: None,
            ext_rouge_l_f: None,
            error: Some(error),
        }
    }
}

/// Mean scores over the items that produced each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_scored: usize,
    pub n_failed: usize,
    pub em: Option<f64>,
    pub rouge1_f: Option<f64>,
    pub rouge_l_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ext_rouge1_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ext_rouge_l_f: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

impl Aggregates {
    pub fn from_items(items: &[ItemMetrics]) -> Aggregates {
        Aggregates {
            n_scored: items.iter().filter(|i| i.error.is_none()).count(),
            n_failed: items.iter().filter(|i| i.error.is_some()).count(),
            em: mean_of(items.iter().map(|i| i.em.map(f64::from))),
            rouge1_f: mean_of(items.iter().map(|i| i.rouge1_f)),
            rouge_l_f: mean_of(items.iter().map(|i| i.rouge_l_f)),
            ext_rouge1_f: mean_of(items.iter().map(|i| i.ext_rouge1_f)),
            ext_rouge_l_f: mean_of(items.iter().map(|i| i.ext_rouge_l_f)),
        }
    }

    /// Mean of several repeat-level aggregates (unweighted: repeats run the
    /// same task set).
    pub fn mean_over(repeats: &[Aggregates]) -> Aggregates {
        Aggregates {
            n_scored: repeats.iter().map(|a| a.n_scored).sum::<usize>() / repeats.len().max(1),
            n_failed: repeats.iter().map(|a| a.n_failed).sum::<usize>() / repeats.len().max(1),
            em: mean_of(repeats.iter().map(|a| a.em)),
            rouge1_f: mean_of(repeats.iter().map(|a| a.rouge1_f)),
            rouge_l_f: mean_of(repeats.iter().map(|a| a.rouge_l_f)),
            ext_rouge1_f: mean_of(repeats.iter().map(|a| a.ext_rouge1_f)),
            ext_rouge_l_f: mean_of(repeats.iter().map(|a| a.ext_rouge_l_f)),
        }
    }
}

/// One repeat's full scoring: every item plus the aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub repeat: usize,
    /// Item count, scored or not.
    pub n: usize,
    pub items: Vec<ItemMetrics>,
    pub aggregates: Aggregates,
}

impl MetricReport {
    pub fn new(repeat: usize, items: Vec<ItemMetrics>) -> MetricReport {
        let aggregates = Aggregates::from_items(&items);
        MetricReport { repeat, n: items.len(), items, aggregates }
    }
}

/// Format a fraction as a percentage with two decimals, the report style.
pub fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("  The  Answer\tIS:  Monday, 10am.  "), "the answer is: monday, 10am");
        assert_eq!(normalize_answer("\"Quoted!\""), "quoted");
        assert_eq!(normalize_answer("..."), "");
        assert_eq!(normalize_answer("Yes."), "yes");
    }

    #[test]
    fn exact_match_examples() {
        let golds = vec!["Monday 10am".to_string(), "10am Monday".to_string()];
        assert_eq!(exact_match("monday  10AM.", &golds), 1);
        assert_eq!(exact_match("10am monday", &golds), 1);
        assert_eq!(exact_match("tuesday", &golds), 0);
        assert_eq!(exact_match("", &[String::new()]), 1);
    }

    #[test]
    fn rouge1_frozen_example() {
        // pred "the cat sat", ref "the cat sat on the mat":
        // P = 3/3, R = 3/6, F1 = 2*(1*0.5)/1.5 = 2/3... with clipping "the"
        // counts once in pred. Overlap = 3. P = 1, R = 0.5 → F1 = 2/3.
        let r = rouge_n("the cat sat", &["the cat sat on the mat".to_string()], 1);
        assert!((r.precision - 1.0).abs() < 1e-12);
        assert!((r.recall - 0.5).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        // Two matching tokens against a three-token reference:
        // P = 1, R = 2/3, F1 = 2*(2/3)/(5/3) = 0.8.
        let r = rouge_n("the cat", &["the cat sat".to_string()], 1);
        assert!((r.precision - 1.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 0.8).abs() < 1e-12);
        // Identity and disjoint endpoints.
        assert_eq!(rouge_n("the cat sat", &["the cat sat".to_string()], 1).f1, 1.0);
        assert_eq!(rouge_n("a b", &["c d".to_string()], 1).f1, 0.0);
    }

    #[test]
    fn rouge_l_frozen_example() {
        // pred "a b c d" vs ref "a c b d": best common subsequence has 3
        // tokens (a b d or a c d); P = R = 3/4; F1 = 0.75 exactly.
        let r = rouge_l("a b c d", &["a c b d".to_string()]);
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 0.75);
        assert_eq!(r.f1, 0.75);
        assert_eq!(rouge_l("same text", &["same text".to_string()]).f1, 1.0);
    }

    #[test]
    fn empty_side_conventions() {
        for f in [
            rouge_n("", &["something".to_string()], 1),
            rouge_n("something", &[String::new()], 1),
            rouge_l("", &["something".to_string()]),
        ] {
            assert_eq!((f.precision, f.recall, f.f1), (0.0, 0.0, 0.0));
        }
        for f in [rouge_n("", &[String::new()], 1), rouge_l("...", &["!!".to_string()])] {
            assert_eq!((f.precision, f.recall, f.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn multi_reference_takes_best_f1_first_on_ties() {
        let refs = vec![
            "x y z".to_string(),           // F1 = 0 against "a b"
            "a b".to_string(),             // F1 = 1
            "a b".to_string(),             // tie — must not matter
        ];
        let r = rouge_n("a b", &refs, 1);
        assert_eq!(r.f1, 1.0);
        // Clipping: repeated pred tokens only match as often as the ref has them.
        let r = rouge_n("a a a", &["a b c".to_string()], 1);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Brute-force overlap oracle: count matches by consuming reference
    /// n-grams one at a time.
    fn oracle_ngram_overlap(pred: &[String], reference: &[String], n: usize) -> usize {
        let make = |tokens: &[String]| -> Vec<Vec<String>> {
            if n == 0 || tokens.len() < n {
                Vec::new()
            } else {
                tokens.windows(n).map(|w| w.to_vec()).collect()
            }
        };
        let pred_grams = make(pred);
        let mut ref_grams = make(reference);
        let mut overlap = 0;
        for gram in &pred_grams {
            if let Some(pos) = ref_grams.iter().position(|r| r == gram) {
                ref_grams.remove(pos);
                overlap += 1;
            }
        }
        overlap
    }

    /// Exponential-time LCS oracle: best common subsequence by enumerating
    /// every subsequence of the shorter side.
    fn oracle_lcs(a: &[String], b: &[String]) -> usize {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for mask in 0u32..(1 << short.len()) {
            let candidate: Vec<&String> =
                short.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t).collect();
            // Is candidate a subsequence of long?
            let mut it = long.iter();
            if candidate.iter().all(|c| it.any(|l| l == *c)) {
                best = best.max(candidate.len());
            }
        }
        best
    }

    fn small_tokens() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            prop_oneof![Just("a"), Just("b"), Just("c"), Just("d"), Just("e")]
                .prop_map(str::to_string),
            0..=8,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn rouge_n_matches_the_consumption_oracle(pred in small_tokens(), reference in small_tokens(), n in 1usize..=2) {
            let ours = rouge_n_single(&pred, &reference, n);
            let make_total = |t: &[String]| if t.len() < n { 0 } else { t.len() - n + 1 };
            let oracle = Rouge::from_counts(
                oracle_ngram_overlap(&pred, &reference, n),
                make_total(&pred),
                make_total(&reference),
            );
            prop_assert!((ours.precision - oracle.precision).abs() < 1e-9);
            prop_assert!((ours.recall - oracle.recall).abs() < 1e-9);
            prop_assert!((ours.f1 - oracle.f1).abs() < 1e-9);
        }

        #[test]
        fn rouge_l_matches_the_exhaustive_oracle(pred in small_tokens(), reference in small_tokens()) {
            let ours = rouge_l_single(&pred, &reference);
            let oracle = if pred.is_empty() || reference.is_empty() {
                Rouge::from_counts(0, pred.len(), reference.len())
            } else {
                Rouge::from_counts(oracle_lcs(&pred, &reference), pred.len(), reference.len())
            };
            prop_assert!((ours.f1 - oracle.f1).abs() < 1e-9);
        }

        #[test]
        fn normalize_is_idempotent(s in ".*") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn scores_stay_in_range_and_match_is_symmetric(a in small_tokens(), b in small_tokens()) {
            let pred = a.join(" ");
            let refs = vec![b.join(" ")];
            for r in [rouge_n(&pred, &refs, 1), rouge_l(&pred, &refs)] {
                prop_assert!((0.0..=1.0).contains(&r.precision));
                prop_assert!((0.0..=1.0).contains(&r.recall));
                prop_assert!((0.0..=1.0).contains(&r.f1));
            }
            // Swapping sides swaps precision and recall.
            let forward = rouge_n(&pred, &refs, 1);
            let backward = rouge_n(&refs[0], &[pred.clone()], 1);
            prop_assert!((forward.precision - backward.recall).abs() < 1e-12);
            prop_assert!((forward.recall - backward.precision).abs() < 1e-12);
            prop_assert!((forward.f1 - backward.f1).abs() < 1e-12);
        }
    }

    fn gold_table() -> GoldTable {
        GoldTable {
            slots: vec!["speaker".to_string(), "time".to_string()],
            rows: vec![
                vec![CellValue::Text("Ann".to_string()), CellValue::Text("9am".to_string())],
                vec![CellValue::Text("Bo".to_string()), CellValue::Null],
            ],
        }
    }

    fn record_set_matching_gold() -> RecordSet {
        use crate::schema::{ExtractionSchema, SchemaOrigin, SchemaSlot, ValueKind};
        let schema = ExtractionSchema::new(
            vec![
                SchemaSlot::new("speaker", "", ValueKind::Text),
                SchemaSlot::new("time", "", ValueKind::Text),
            ],
            SchemaOrigin::Induced,
        );
        let mut rows = Vec::new();
        for (speaker, time) in [("Ann", Some("9am")), ("Bo", None)] {
            let mut values = std::collections::BTreeMap::new();
            values.insert("speaker".to_string(), CellValue::Text(speaker.to_string()));
            values.insert(
                "time".to_string(),
                time.map_or(CellValue::Null, |t| CellValue::Text(t.to_string())),
            );
            rows.push(crate::record::RecordRow::new(values));
        }
        RecordSet::new(schema, rows)
    }

    #[test]
    fn extraction_quality_perfect_match_scores_one() {
        let (r1, rl) = extraction_quality(&record_set_matching_gold(), &gold_table()).unwrap();
        assert!((r1 - 1.0).abs() < 1e-12, "{r1}");
        assert!((rl - 1.0).abs() < 1e-12, "{rl}");
    }

    #[test]
    fn extraction_quality_empty_sides() {
        use crate::schema::{ExtractionSchema, SchemaOrigin, SchemaSlot, ValueKind};
        let schema = ExtractionSchema::new(
            vec![SchemaSlot::new("speaker", "", ValueKind::Text)],
            SchemaOrigin::Induced,
        );
        // Nothing extracted against a real gold: a zero, not a missing score.
        let empty = RecordSet::empty(schema);
        assert_eq!(extraction_quality(&empty, &gold_table()), Some((0.0, 0.0)));
        // No gold rows at all: nothing to score against.
        let no_gold = GoldTable { slots: vec!["speaker".to_string()], rows: vec![] };
        assert_eq!(extraction_quality(&record_set_matching_gold(), &no_gold), None);
    }

    #[test]
    fn linearization_keeps_slot_order_and_skips_nulls() {
        let gold = gold_table();
        let text = linearize_rows(&gold.slots, &gold.rows);
        assert_eq!(text, "speaker: Ann; time: 9am\nspeaker: Bo");
    }

    #[test]
    fn aggregates_average_only_scored_items() {
        let items = vec![
            ItemMetrics::scored("a", "x", &["x".to_string()]),
            ItemMetrics::scored("b", "y", &["z was the answer".to_string()]),
            ItemMetrics::failed("c", "transport".to_string()),
        ];
        let agg = Aggregates::from_items(&items);
        assert_eq!(agg.n_scored, 2);
        assert_eq!(agg.n_failed, 1);
        assert!((agg.em.unwrap() - 0.5).abs() < 1e-12);
        assert!(agg.ext_rouge1_f.is_none());
        // Recomputing the mean from the items agrees to tight tolerance.
        let manual = (items[0].rouge1_f.unwrap() + items[1].rouge1_f.unwrap()) / 2.0;
        assert!((agg.rouge1_f.unwrap() - manual).abs() < 1e-12);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(Some(0.5)), "50.00");
        assert_eq!(percent(Some(2.0 / 3.0)), "66.67");
        assert_eq!(percent(None), "-");
    }
}
