//! Report assembly: joins evaluation records with confidence records
//! into an AUROC matrix (languages by methods), per-language answer
//! quality, cross-lingual aggregate rows, and a refinement
//! before/after table, rendered as JSON, aligned text, or CSV.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crosslingual::AggregateRecord;
use crate::lang::LanguageCode;
use crate::metrics::{auroc, EvalRecord};
use crate::refine::RefinementOutcome;
use crate::types::{ConfidenceMethod, ConfidenceRecord};

/// Cell sentinel for groups with no computable value.
pub const EMPTY_CELL: &str = "—";

/// Column order for the AUROC matrix; only methods actually present
/// in the confidence records become columns.
const COLUMN_ORDER: [ConfidenceMethod; 8] = [
    ConfidenceMethod::LikelihoodMin,
    ConfidenceMethod::LikelihoodAvg,
    ConfidenceMethod::LikelihoodNorm,
    ConfidenceMethod::TrueProbability,
    ConfidenceMethod::VerbalNumber,
    ConfidenceMethod::VerbalWord,
    ConfidenceMethod::TemperatureSampling,
    ConfidenceMethod::PromptPerturbation,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub language: LanguageCode,
    pub items: usize,
    pub mean_em: f64,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_gen_tokens: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub grouping: String,
    pub items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub language: LanguageCode,
    pub total: usize,
    pub refined: usize,
    pub em_before: f64,
    pub em_after: f64,
    pub f1_before: f64,
    pub f1_after: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub languages: Vec<LanguageCode>,
    pub methods: Vec<ConfidenceMethod>,
    /// `auroc[row][column]` follows `languages` and `methods` order;
    /// empty or single-class cells are null.
    pub auroc: Vec<Vec<Option<f64>>>,
    pub quality: Vec<QualityRow>,
    pub aggregates: Vec<AggregateRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
}

/// Correctness labels keyed by language and item id.
fn label_index(eval: &[EvalRecord]) -> BTreeMap<(LanguageCode, &str), bool> {
    eval.iter()
        .map(|record| ((record.language, record.item_id.as_str()), record.nli_correct))
        .collect()
}

fn auroc_or_empty(pairs: &[(f64, bool)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    auroc(pairs).ok()
}

fn mean(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut count = 0usize;
    let mut sum = 0.0;
    for value in values {
        count += 1;
        sum += value;
    }
    (count, if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Joins evaluation and confidence records into the full report. Never
/// fails: combinations without data come out as empty cells.
pub fn build_report(
    eval: &[EvalRecord],
    confidence: &[ConfidenceRecord],
    aggregates: &[AggregateRecord],
    refinement: Option<RefinementReport>,
) -> Report {
    let labels = label_index(eval);

    let languages: Vec<LanguageCode> = LanguageCode::ALL
        .iter()
        .copied()
        .filter(|&l| {
            eval.iter().any(|r| r.language == l)
                || confidence.iter().any(|r| r.language == l)
        })
        .collect();
    let methods: Vec<ConfidenceMethod> = COLUMN_ORDER
        .iter()
        .copied()
        .filter(|&m| confidence.iter().any(|r| r.method == m))
        .collect();

    let auroc_matrix = languages
        .iter()
        .map(|&language| {
            methods
                .iter()
                .map(|&method| {
                    let pairs: Vec<(f64, bool)> = confidence
                        .iter()
                        .filter(|r| r.language == language && r.method == method)
                        .filter_map(|r| {
                            labels
                                .get(&(language, r.item_id.as_str()))
                                .map(|&label| (r.score.get(), label))
                        })
                        .collect();
                    auroc_or_empty(&pairs)
                })
                .collect()
        })
        .collect();

    let quality = languages
        .iter()
        .filter_map(|&language| {
            let rows: Vec<&EvalRecord> =
                eval.iter().filter(|r| r.language == language).collect();
            if rows.is_empty() {
                return None;
            }
            let (items, mean_em) =
                mean(rows.iter().map(|r| if r.em { 1.0 } else { 0.0 }));
            let (_, mean_f1) = mean(rows.iter().map(|r| r.f1.get()));
            let (_, mean_accuracy) =
                mean(rows.iter().map(|r| if r.nli_correct { 1.0 } else { 0.0 }));
            let (counted, avg_tokens) =
                mean(rows.iter().filter_map(|r| r.gen_tokens.map(|t| t as f64)));
            Some(QualityRow {
                language,
                items,
                mean_em,
                mean_f1,
                mean_accuracy,
                avg_gen_tokens: (counted > 0).then_some(avg_tokens),
            })
        })
        .collect();

    let mut grouping_order: Vec<&str> = Vec::new();
    for aggregate in aggregates {
        if !grouping_order.contains(&aggregate.grouping.as_str()) {
            grouping_order.push(&aggregate.grouping);
        }
    }
    let aggregate_rows = grouping_order
        .iter()
        .map(|&name| {
            let records: Vec<&AggregateRecord> =
                aggregates.iter().filter(|a| a.grouping == name).collect();
            let pairs: Vec<(f64, bool)> = records
                .iter()
                .filter_map(|a| {
                    labels
                        .get(&(a.record.language, a.record.item_id.as_str()))
                        .map(|&label| (a.record.score.get(), label))
                })
                .collect();
            AggregateRow {
                grouping: name.to_string(),
                items: records.len(),
                auroc: auroc_or_empty(&pairs),
            }
        })
        .collect();

    Report {
        languages,
        methods,
        auroc: auroc_matrix,
        quality,
        aggregates: aggregate_rows,
        refinement,
    }
}

/// Per-language before/after quality deltas for a refinement pass.
pub fn refinement_delta(
    before: &[EvalRecord],
    after: &[EvalRecord],
    outcomes: &[RefinementOutcome],
) -> RefinementReport {
    let rows = LanguageCode::ALL
        .iter()
        .copied()
        .filter_map(|language| {
            let pre: Vec<&EvalRecord> =
                before.iter().filter(|r| r.language == language).collect();
            let post: Vec<&EvalRecord> =
                after.iter().filter(|r| r.language == language).collect();
            if pre.is_empty() && post.is_empty() {
                return None;
            }
            let refined = outcomes
                .iter()
                .filter(|o| o.language == language && o.refined)
                .count();
            let em = |rows: &[&EvalRecord]| {
                mean(rows.iter().map(|r| if r.em { 1.0 } else { 0.0 })).1
            };
            let f1 = |rows: &[&EvalRecord]| mean(rows.iter().map(|r| r.f1.get())).1;
            let acc = |rows: &[&EvalRecord]| {
                mean(rows.iter().map(|r| if r.nli_correct { 1.0 } else { 0.0 })).1
            };
            Some(RefinementRow {
                language,
                total: pre.len().max(post.len()),
                refined,
                em_before: em(&pre),
                em_after: em(&post),
                f1_before: f1(&pre),
                f1_after: f1(&post),
                accuracy_before: acc(&pre),
                accuracy_after: acc(&post),
            })
        })
        .collect();
    RefinementReport { rows }
}

fn format_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => EMPTY_CELL.to_string(),
    }
}

/// Pads a header row and data rows into aligned columns. The first
/// column is left-aligned, the rest right-aligned.
fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let columns = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], out: &mut String| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                out.push_str(cell);
                if i < columns - 1 {
                    out.push_str(&" ".repeat(pad));
                }
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.push('\n');
    };
    render_row(headers, &mut out);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (columns - 1)));
    out.push('\n');
    for row in rows {
        render_row(row, &mut out);
    }
    out
}

impl Report {
    pub fn auroc_cell(&self, language: LanguageCode, method: ConfidenceMethod) -> Option<f64> {
        let row = self.languages.iter().position(|&l| l == language)?;
        let column = self.methods.iter().position(|&m| m == method)?;
        self.auroc[row][column]
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// The AUROC matrix as CSV; cells without a value stay empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("language");
        for method in &self.methods {
            out.push(',');
            out.push_str(method.as_str());
        }
        out.push('\n');
        for (row, &language) in self.languages.iter().enumerate() {
            out.push_str(language.as_str());
            for cell in &self.auroc[row] {
                out.push(',');
                if let Some(value) = cell {
                    out.push_str(&format!("{value:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.methods.is_empty() {
            out.push_str("Confidence AUROC by language and method\n");
            let mut headers = vec!["language".to_string()];
            headers.extend(self.methods.iter().map(|m| m.as_str().to_string()));
            let rows: Vec<Vec<String>> = self
                .languages
                .iter()
                .enumerate()
                .map(|(row, &language)| {
                    let mut cells = vec![language.as_str().to_string()];
                    cells.extend(self.auroc[row].iter().map(|&c| format_cell(c)));
                    cells
                })
                .collect();
            out.push_str(&render_table(&headers, &rows));
            out.push('\n');
        }

        if !self.quality.is_empty() {
            out.push_str("Answer quality by language\n");
            let headers: Vec<String> =
                ["language", "items", "EM", "F1", "accuracy", "avg tokens"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
            let rows: Vec<Vec<String>> = self
                .quality
                .iter()
                .map(|q| {
                    vec![
                        q.language.as_str().to_string(),
                        q.items.to_string(),
                        format!("{:.4}", q.mean_em),
                        format!("{:.4}", q.mean_f1),
                        format!("{:.4}", q.mean_accuracy),
                        match q.avg_gen_tokens {
                            Some(t) => format!("{t:.2}"),
                            None => EMPTY_CELL.to_string(),
                        },
                    ]
                })
                .collect();
            out.push_str(&render_table(&headers, &rows));
            out.push('\n');
        }

        if !self.aggregates.is_empty() {
            out.push_str("Cross-lingual aggregation\n");
            let headers: Vec<String> =
                ["grouping", "items", "AUROC"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> = self
                .aggregates
                .iter()
                .map(|a| {
                    vec![a.grouping.clone(), a.items.to_string(), format_cell(a.auroc)]
                })
                .collect();
            out.push_str(&render_table(&headers, &rows));
            out.push('\n');
        }

        if let Some(refinement) = &self.refinement {
            out.push_str("Refinement before/after\n");
            let headers: Vec<String> = [
                "language", "refined", "total", "EM before", "EM after", "F1 before",
                "F1 after", "acc before", "acc after",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let rows: Vec<Vec<String>> = refinement
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.language.as_str().to_string(),
                        r.refined.to_string(),
                        r.total.to_string(),
                        format!("{:.4}", r.em_before),
                        format!("{:.4}", r.em_after),
                        format!("{:.4}", r.f1_before),
                        format!("{:.4}", r.f1_after),
                        format!("{:.4}", r.accuracy_before),
                        format!("{:.4}", r.accuracy_after),
                    ]
                })
                .collect();
            out.push_str(&render_table(&headers, &rows));
        }
        if out.is_empty() {
            out.push_str("(no records)\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Score;
    use ConfidenceMethod::{LikelihoodMin, VerbalNumber};
    use LanguageCode::{De, En, Fr};

    fn eval(id: &str, language: LanguageCode, correct: bool, tokens: Option<u64>) -> EvalRecord {
        EvalRecord {
            item_id: id.to_string(),
            language,
            em: correct,
            f1: Score::clamped(if correct { 1.0 } else { 0.25 }),
            nli_correct: correct,
            confidence: None,
            gen_tokens: tokens,
            flags: Default::default(),
        }
    }

    fn conf(
        id: &str,
        language: LanguageCode,
        method: ConfidenceMethod,
        score: f64,
    ) -> ConfidenceRecord {
        ConfidenceRecord::new(id, language, method, Score::new(score).unwrap())
    }

    fn sample_records() -> (Vec<EvalRecord>, Vec<ConfidenceRecord>) {
        let mut eval_records = Vec::new();
        let mut conf_records = Vec::new();
        for (index, &language) in [En, Fr].iter().enumerate() {
            for item in 0..4 {
                let id = format!("q{item}");
                let correct = item % 2 == 0;
                eval_records.push(eval(&id, language, correct, Some(4 + 2 * (item % 2))));
                let base = if correct { 0.8 } else { 0.3 };
                let nudge = (index as f64 + item as f64) * 0.01;
                conf_records.push(conf(&id, language, VerbalNumber, base + nudge));
                conf_records.push(conf(&id, language, LikelihoodMin, base - nudge));
            }
        }
        (eval_records, conf_records)
    }

    #[test]
    fn matrix_shape_follows_languages_and_methods() {
        let (eval_records, conf_records) = sample_records();
        let report = build_report(&eval_records, &conf_records, &[], None);
        assert_eq!(report.languages, vec![En, Fr]);
        assert_eq!(report.methods, vec![LikelihoodMin, VerbalNumber]);
        assert_eq!(report.auroc.len(), 2);
        assert!(report.auroc.iter().all(|row| row.len() == 2));
        assert_eq!(report.auroc_cell(En, VerbalNumber), Some(1.0));
        assert_eq!(report.auroc_cell(Fr, LikelihoodMin), Some(1.0));
    }

    #[test]
    fn no_confidence_records_means_no_auroc_columns() {
        let (eval_records, _) = sample_records();
        let report = build_report(&eval_records, &[], &[], None);
        assert!(report.methods.is_empty());
        assert!(report.auroc.iter().all(|row| row.is_empty()));
        assert!(!report.to_text().contains("Confidence AUROC"));
        assert!(report.to_text().contains("Answer quality"));
    }

    #[test]
    fn average_token_length_is_the_mean() {
        let records = vec![eval("q0", En, true, Some(4)), eval("q1", En, false, Some(6))];
        let report = build_report(&records, &[], &[], None);
        assert_eq!(report.quality[0].avg_gen_tokens, Some(5.0));
        let without = vec![eval("q0", En, true, None)];
        let report = build_report(&without, &[], &[], None);
        assert_eq!(report.quality[0].avg_gen_tokens, None);
    }

    #[test]
    fn degenerate_labels_render_as_empty_cell() {
        let eval_records = vec![eval("q0", En, true, None), eval("q1", En, true, None)];
        let conf_records = vec![
            conf("q0", En, VerbalNumber, 0.9),
            conf("q1", En, VerbalNumber, 0.4),
        ];
        let report = build_report(&eval_records, &conf_records, &[], None);
        assert_eq!(report.auroc_cell(En, VerbalNumber), None);
        assert!(report.to_text().contains(EMPTY_CELL));
    }

    #[test]
    fn missing_language_method_combination_is_empty_not_distorted() {
        let eval_records = vec![
            eval("q0", En, true, None),
            eval("q1", En, false, None),
            eval("q0", De, true, None),
            eval("q1", De, false, None),
        ];
        // De has likelihood scores only.
        let conf_records = vec![
            conf("q0", En, VerbalNumber, 0.9),
            conf("q1", En, VerbalNumber, 0.2),
            conf("q0", De, LikelihoodMin, 0.8),
            conf("q1", De, LikelihoodMin, 0.1),
        ];
        let report = build_report(&eval_records, &conf_records, &[], None);
        assert_eq!(report.auroc_cell(En, VerbalNumber), Some(1.0));
        assert_eq!(report.auroc_cell(En, LikelihoodMin), None);
        assert_eq!(report.auroc_cell(De, VerbalNumber), None);
        assert_eq!(report.auroc_cell(De, LikelihoodMin), Some(1.0));
    }

    #[test]
    fn aggregate_rows_score_against_pivot_labels() {
        let eval_records = vec![eval("q0", En, true, None), eval("q1", En, false, None)];
        let aggregates = vec![
            AggregateRecord {
                grouping: "shared3".into(),
                record: conf("q0", En, ConfidenceMethod::CrossLingual, 0.9),
            },
            AggregateRecord {
                grouping: "shared3".into(),
                record: conf("q1", En, ConfidenceMethod::CrossLingual, 0.2),
            },
        ];
        let report = build_report(&eval_records, &[], &aggregates, None);
        assert_eq!(report.aggregates.len(), 1);
        assert_eq!(report.aggregates[0].grouping, "shared3");
        assert_eq!(report.aggregates[0].items, 2);
        assert_eq!(report.aggregates[0].auroc, Some(1.0));
        assert!(report.to_text().contains("Cross-lingual aggregation"));
    }

    #[test]
    fn refinement_delta_reports_means_and_counts() {
        use crate::refine::RefinementOutcome;
        let before = vec![eval("q0", En, false, None), eval("q1", En, true, None)];
        let after = vec![eval("q0", En, true, None), eval("q1", En, true, None)];
        let outcomes = vec![RefinementOutcome {
            item_id: "q0".into(),
            language: En,
            refined: true,
            threshold_used: 0.5,
            initial_answer: "x".into(),
            final_answer: "y".into(),
            initial_conf: Score::clamped(0.4),
            final_conf: None,
            flags: Default::default(),
            error: None,
        }];
        let delta = refinement_delta(&before, &after, &outcomes);
        assert_eq!(delta.rows.len(), 1);
        let row = &delta.rows[0];
        assert_eq!(row.total, 2);
        assert_eq!(row.refined, 1);
        assert_eq!(row.accuracy_before, 0.5);
        assert_eq!(row.accuracy_after, 1.0);

        let report = build_report(&after, &[], &[], Some(delta));
        assert!(report.to_text().contains("Refinement before/after"));
    }

    #[test]
    fn renders_are_deterministic() {
        let (eval_records, conf_records) = sample_records();
        let one = build_report(&eval_records, &conf_records, &[], None);
        let two = build_report(&eval_records, &conf_records, &[], None);
        assert_eq!(one.to_json(), two.to_json());
        assert_eq!(one.to_text(), two.to_text());
        assert_eq!(one.to_csv(), two.to_csv());
    }

    #[test]
    fn json_round_trips() {
        let (eval_records, conf_records) = sample_records();
        let report = build_report(&eval_records, &conf_records, &[], None);
        let back: Report = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_has_header_and_one_row_per_language() {
        let (eval_records, conf_records) = sample_records();
        let report = build_report(&eval_records, &conf_records, &[], None);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "language,likelihood-min,verbal-number");
        assert!(lines[1].starts_with("en,"));
        assert!(lines[2].starts_with("fr,"));
    }

    #[test]
    fn empty_report_renders_placeholder() {
        let report = build_report(&[], &[], &[], None);
        assert_eq!(report.to_text(), "(no records)\n");
    }
}
