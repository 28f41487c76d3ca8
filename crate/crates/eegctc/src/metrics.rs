//! Character error rate via Levenshtein distance, and tabulation of
//! evaluation sweeps into a text table plus CSV.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty reference at pair index {0}")]
    EmptyReference(usize),
}

/// One reference/hypothesis pair with its precomputed distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub reference: String,
    pub hypothesis: String,
    pub edit_distance: usize,
    pub reference_length: usize,
}

/// Evaluation results for one experimental cell (corpus size x feature set x
/// encoder configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub corpus_size: usize,
    pub config: String,
    pub feature_set: String,
    pub pairs: Vec<PairResult>,
    /// Corpus-pooled CER in percent: 100 * sum(distances) / sum(|reference|).
    pub cer_percent: f64,
}

/// Minimum number of unit-cost substitutions, insertions and deletions
/// turning `reference` into `hypothesis`; code-point granularity.
pub fn edit_distance(reference: &str, hypothesis: &str) -> usize {
    let a: Vec<char> = reference.chars().collect();
    let b: Vec<char> = hypothesis.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Corpus-pooled character error rate in percent: total edits over total
/// reference characters, not a mean of per-utterance rates.
pub fn cer(pairs: &[(String, String)]) -> Result<f64, MetricsError> {
    let mut edits = 0usize;
    let mut chars = 0usize;
    for (i, (reference, hypothesis)) in pairs.iter().enumerate() {
        let len = reference.chars().count();
        if len == 0 {
            return Err(MetricsError::EmptyReference(i));
        }
        edits += edit_distance(reference, hypothesis);
        chars += len;
    }
    if chars == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * edits as f64 / chars as f64)
}

/// Builds an `EvalReport` from raw pairs, computing distances and pooled CER.
pub fn build_report(
    corpus_size: usize,
    config: &str,
    feature_set: &str,
    pairs: &[(String, String)],
) -> Result<EvalReport, MetricsError> {
    let cer_percent = cer(pairs)?;
    let detailed = pairs
        .iter()
        .map(|(r, h)| PairResult {
            reference: r.clone(),
            hypothesis: h.clone(),
            edit_distance: edit_distance(r, h),
            reference_length: r.chars().count(),
        })
        .collect();
    Ok(EvalReport {
        corpus_size,
        config: config.to_string(),
        feature_set: feature_set.to_string(),
        pairs: detailed,
        cer_percent,
    })
}

/// Human-readable table (rows = corpus sizes, columns = feature set /
/// config combinations) plus a bit-stable CSV.
pub fn tabulate(reports: &[EvalReport]) -> (String, String) {
    // CSV: one row per report in input order.
    let mut csv =
        String::from("corpus_size,config,feature_set,cer_percent,utterances,total_ref_chars\n");
    for r in reports {
        let total_chars: usize = r.pairs.iter().map(|p| p.reference_length).sum();
        csv.push_str(&format!(
            "{},{},{},{:.6},{},{}\n",
            r.corpus_size,
            r.config,
            r.feature_set,
            r.cer_percent,
            r.pairs.len(),
            total_chars
        ));
    }

    // Table: collect column labels and row keys in first-seen order.
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    for r in reports {
        let col = format!("{}/{}", r.feature_set, r.config);
        if !columns.contains(&col) {
            columns.push(col);
        }
        if !rows.contains(&r.corpus_size) {
            rows.push(r.corpus_size);
        }
    }
    rows.sort_unstable();
    let mut header = vec!["corpus_size".to_string()];
    header.extend(columns.iter().cloned());
    let mut grid: Vec<Vec<String>> = vec![header];
    for &size in &rows {
        let mut row = vec![size.to_string()];
        for col in &columns {
            let cell = reports
                .iter()
                .find(|r| r.corpus_size == size && format!("{}/{}", r.feature_set, r.config) == *col)
                .map(|r| format!("{:.2}", r.cer_percent))
                .unwrap_or_else(|| "-".to_string());
            row.push(cell);
        }
        grid.push(row);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    for row in &grid {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}"))
            .collect();
        table.push_str(&line.join("  "));
        table.push('\n');
    }
    (table, csv)
}
