//! Filtered link-prediction metrics and noise-detection scores.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{RankScore, Scorer};
use crate::error::{Error, Result};
use crate::kg::{FlipLog, Triple};

/// Which slot of a known triple is hidden from the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RankQuery {
    pub triple: Triple,
    pub side: Side,
}

impl RankQuery {
    pub fn answer(&self) -> usize {
        match self.side {
            Side::Head => self.triple.head,
            Side::Tail => self.triple.tail,
        }
    }

    /// The query triple with `entity` in the masked slot.
    pub fn complete(&self, entity: usize) -> Triple {
        let t = self.triple;
        match self.side {
            Side::Head => Triple::new(entity, t.relation, t.tail),
            Side::Tail => Triple::new(t.head, t.relation, entity),
        }
    }
}

/// A tail query then a head query for every triple, in input order.
pub fn queries(triples: &[Triple]) -> Vec<RankQuery> {
    triples
        .iter()
        .flat_map(|&triple| {
            [Side::Tail, Side::Head]
                .into_iter()
                .map(move |side| RankQuery { triple, side })
        })
        .collect()
}

/// How equal scores affect the rank of the true answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Ties never push the answer down.
    #[default]
    Optimistic,
    /// Every tied candidate counts as ranked above the answer.
    Pessimistic,
}

/// Rank of `answer` among `scores`, skipping every candidate for which
/// `filtered` is true except the answer itself.
pub fn rank_from_scores(
    scores: &[f64],
    answer: usize,
    filtered: impl Fn(usize) -> bool,
    tie: TieRule,
) -> Result<usize> {
    let target = *scores.get(answer).ok_or_else(|| {
        Error::Internal(format!(
            "answer {answer} outside {} candidates",
            scores.len()
        ))
    })?;
    let mut rank = 1;
    for (e, &s) in scores.iter().enumerate() {
        if e == answer || filtered(e) {
            continue;
        }
        let above = match tie {
            TieRule::Optimistic => s > target,
            TieRule::Pessimistic => s >= target,
        };
        if above {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Filtered rank of a single query against all entities.
pub fn filtered_rank(
    query: &RankQuery,
    scorer: &Scorer,
    filter: &HashSet<Triple>,
    by: RankScore,
    tie: TieRule,
    buf: &mut Vec<f64>,
) -> Result<usize> {
    let answer = query.answer();
    if answer >= scorer.num_entities() {
        return Err(Error::Internal(format!(
            "answer entity {answer} not among candidates"
        )));
    }
    scorer.score_candidates(&query.triple, query.side == Side::Tail, by, buf);
    rank_from_scores(buf, answer, |e| filter.contains(&query.complete(e)), tie)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    /// `(k, hits@k)` in the order requested.
    pub hits: Vec<(usize, f64)>,
    pub queries: usize,
}

impl MetricsReport {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|&(_, h)| h)
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("queries,mrr");
        for (k, _) in &self.hits {
            let _ = write!(s, ",hits@{k}");
        }
        s
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.queries, self.mrr);
        for (_, h) in &self.hits {
            let _ = write!(s, ",{h}");
        }
        s
    }

    /// Two-column table with right-aligned values.
    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("queries".to_string(), self.queries.to_string()),
            ("mrr".to_string(), format!("{:.4}", self.mrr)),
        ];
        rows.extend(
            self.hits
                .iter()
                .map(|(k, h)| (format!("hits@{k}"), format!("{h:.4}"))),
        );
        let wk = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let wv = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<wk$}  {v:>wv$}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "{}", self.csv_header());
        let _ = writeln!(s, "{}", self.csv_row());
        fs::write(path, s)?;
        Ok(())
    }
}

/// Parses a cutoff list such as `"1,3,10"`.
pub fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("bad hits cutoff {p:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ks)
}

pub fn compute_metrics(ranks: &[usize], ks: &[usize]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list".into()));
    }
    if let Some(&r) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidArgument(format!("rank {r} is not positive")));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(MetricsReport {
        mrr,
        hits,
        queries: ranks.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub by: RankScore,
    pub tie: TieRule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 10],
            by: RankScore::Positive,
            tie: TieRule::Optimistic,
        }
    }
}

/// Ranks for every query, computed in parallel and returned in query order.
pub fn ranks(
    scorer: &Scorer,
    queries: &[RankQuery],
    filter: &HashSet<Triple>,
    opts: &EvalOptions,
) -> Result<Vec<usize>> {
    queries
        .par_iter()
        .map_init(Vec::new, |buf, q| {
            filtered_rank(q, scorer, filter, opts.by, opts.tie, buf)
        })
        .collect()
}

/// Head and tail queries for every triple, ranked and summarised.
pub fn evaluate(
    scorer: &Scorer,
    triples: &[Triple],
    filter: &HashSet<Triple>,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let qs = queries(triples);
    compute_metrics(&ranks(scorer, &qs, filter, opts)?, &opts.ks)
}

/// Probability that a random positive sample scores above a random negative
/// one, ties counted half (rank-sum form).
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty("AUC needs both classes".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("AUC input contains NaN".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionReport {
    /// False when the flip log has no edits.
    pub applicable: bool,
    /// Added triples that are part of the labeled set.
    pub added_in_labeled: usize,
    pub genuine: usize,
    /// Separation of genuine from added triples by `W̃^L` (added should be low).
    pub auc: Option<f64>,
    /// Share of added triples among the `n` lowest-posterior labeled triples.
    pub precision_at_n: Option<(usize, f64)>,
    pub removed: usize,
    /// Share of removed triples ranked within the top `n` of their head or
    /// tail query.
    pub recall_at_n: Option<(usize, f64)>,
}

impl DetectionReport {
    pub fn not_applicable() -> Self {
        Self::default()
    }

    pub fn csv_header() -> &'static str {
        "applicable,added_in_labeled,genuine,auc,precision_n,precision,removed,recall_n,recall"
    }

    pub fn csv_row(&self) -> String {
        fn opt(x: Option<f64>) -> String {
            x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
        }
        let (pn, p) = self
            .precision_at_n
            .map_or(("NA".into(), "NA".into()), |(n, p)| {
                (n.to_string(), p.to_string())
            });
        let (rn, r) = self
            .recall_at_n
            .map_or(("NA".into(), "NA".into()), |(n, r)| {
                (n.to_string(), r.to_string())
            });
        format!(
            "{},{},{},{},{pn},{p},{},{rn},{r}",
            self.applicable,
            self.added_in_labeled,
            self.genuine,
            opt(self.auc),
            self.removed
        )
    }

    pub fn to_table(&self) -> String {
        if !self.applicable {
            return "detection  not applicable (empty flip log)\n".into();
        }
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut rows = vec![
            (
                "added in labeled".to_string(),
                self.added_in_labeled.to_string(),
            ),
            ("genuine".to_string(), self.genuine.to_string()),
            ("fp auc".to_string(), fmt(self.auc)),
        ];
        if let Some((n, p)) = self.precision_at_n {
            rows.push((format!("fp precision@{n}"), format!("{p:.4}")));
        }
        rows.push(("removed".to_string(), self.removed.to_string()));
        if let Some((n, r)) = self.recall_at_n {
            rows.push((format!("fn recall@{n}"), format!("{r:.4}")));
        }
        let wk = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let wv = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        rows.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k:<wk$}  {v:>wv$}");
            out
        })
    }
}

/// Cutoffs for [`detection_report`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DetectionOptions {
    /// Defaults to the number of added triples found in the labeled set.
    pub precision_n: Option<usize>,
    /// Defaults to 10.
    pub recall_n: Option<usize>,
}

/// Scores the posteriors of the labeled triples against the flip log.
///
/// `labeled` and `tilde_labeled` are parallel. False-negative recovery needs
/// a scorer; candidates that are labeled triples are filtered out.
pub fn detection_report(
    labeled: &[Triple],
    tilde_labeled: &[f64],
    flips: &FlipLog,
    scorer: Option<&Scorer>,
    opts: DetectionOptions,
) -> Result<DetectionReport> {
    if labeled.len() != tilde_labeled.len() {
        return Err(Error::ShapeMismatch {
            op: "detection_report",
            shapes: vec![vec![labeled.len()], vec![tilde_labeled.len()]],
        });
    }
    if flips.is_empty() {
        return Ok(DetectionReport::not_applicable());
    }
    let added: HashSet<Triple> = flips.added().copied().collect();
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for (t, &w) in labeled.iter().zip(tilde_labeled) {
        if added.contains(t) {
            neg.push(w);
        } else {
            pos.push(w);
        }
    }
    let mut report = DetectionReport {
        applicable: true,
        added_in_labeled: neg.len(),
        genuine: pos.len(),
        ..Default::default()
    };
    if !neg.is_empty() && !pos.is_empty() {
        report.auc = Some(auc(&pos, &neg)?);
    }
    let n = opts.precision_n.unwrap_or(neg.len()).min(labeled.len());
    if n > 0 {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.sort_by(|&a, &b| {
            tilde_labeled[a]
                .total_cmp(&tilde_labeled[b])
                .then(a.cmp(&b))
        });
        let hits = order[..n]
            .iter()
            .filter(|&&i| added.contains(&labeled[i]))
            .count();
        report.precision_at_n = Some((n, hits as f64 / n as f64));
    }

    let removed: Vec<Triple> = flips.removed().copied().collect();
    report.removed = removed.len();
    if let (Some(scorer), false) = (scorer, removed.is_empty()) {
        let top = opts.recall_n.unwrap_or(10);
        let filter: HashSet<Triple> = labeled.iter().copied().collect();
        let found = removed
            .par_iter()
            .map_init(Vec::new, |buf, &t| -> Result<bool> {
                for side in [Side::Tail, Side::Head] {
                    let q = RankQuery { triple: t, side };
                    if filtered_rank(
                        &q,
                        scorer,
                        &filter,
                        RankScore::Positive,
                        TieRule::Optimistic,
                        buf,
                    )? <= top
                    {
                        return Ok(true);
                    }
                }
                Ok(false)
            })
            .collect::<Result<Vec<bool>>>()?;
        let recovered = found.iter().filter(|&&f| f).count();
        report.recall_at_n = Some((top, recovered as f64 / removed.len() as f64));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kg::Edit;

    #[test]
    fn unique_maximum_ranks_first() {
        assert_eq!(
            rank_from_scores(&[0.1, 0.9, 0.3], 1, |_| false, TieRule::Optimistic).unwrap(),
            1
        );
    }

    #[test]
    fn ties_follow_rule() {
        let s = [0.5; 6];
        assert_eq!(
            rank_from_scores(&s, 2, |_| false, TieRule::Optimistic).unwrap(),
            1
        );
        assert_eq!(
            rank_from_scores(&s, 2, |_| false, TieRule::Pessimistic).unwrap(),
            6
        );
    }

    #[test]
    fn filtered_candidates_are_skipped_but_answer_is_not() {
        let s = [0.9, 0.8, 0.1, 0.95];
        assert_eq!(
            rank_from_scores(&s, 2, |_| false, TieRule::Optimistic).unwrap(),
            4
        );
        assert_eq!(
            rank_from_scores(&s, 2, |e| e == 0 || e == 3, TieRule::Optimistic).unwrap(),
            2
        );
        assert_eq!(
            rank_from_scores(&s, 2, |_| true, TieRule::Optimistic).unwrap(),
            1
        );
    }

    #[test]
    fn metrics_examples() {
        let r = compute_metrics(&[1, 1, 1], &[1]).unwrap();
        assert_eq!((r.mrr, r.hits_at(1)), (1.0, Some(1.0)));
        let r = compute_metrics(&[2, 4], &[1, 3, 10]).unwrap();
        assert_eq!(r.mrr, 0.375);
        assert_eq!(r.hits_at(3), Some(0.5));
        let r = compute_metrics(&[11, 50, 12], &[10]).unwrap();
        assert_eq!(r.hits_at(10), Some(0.0));
        assert!(compute_metrics(&[], &[1]).is_err());
        assert_eq!(compute_metrics(&[7], &[]).unwrap().mrr, 1.0 / 7.0);
    }

    #[test]
    fn report_formats_list_requested_cutoffs() {
        let r = compute_metrics(&[1, 2], &parse_ks("1,3,10").unwrap()).unwrap();
        assert_eq!(r.csv_header(), "queries,mrr,hits@1,hits@3,hits@10");
        assert_eq!(r.csv_row(), "2,0.75,0.5,1,1");
        assert!(r.to_table().contains("hits@10"));
        assert!(parse_ks("1,x").is_err());
        assert!(parse_ks("0").is_err());
    }

    fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut c = 0.0;
        for &p in pos {
            for &n in neg {
                c += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        c / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auc_matches_pairwise_count() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1], &[0.9]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let pos: Vec<f64> = (0..rng.gen_range(1..20))
                .map(|_| (rng.gen_range(0..8) as f64) / 8.0)
                .collect();
            let neg: Vec<f64> = (0..rng.gen_range(1..20))
                .map(|_| (rng.gen_range(0..8) as f64) / 8.0)
                .collect();
            assert!((auc(&pos, &neg).unwrap() - brute_auc(&pos, &neg)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_posteriors_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 400;
        let mean: f64 = (0..trials)
            .map(|_| {
                let pos: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
                let neg: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
                auc(&pos, &neg).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    fn flips(edits: Vec<(Triple, Edit)>) -> FlipLog {
        FlipLog {
            seed: 0,
            ptb_rate: 0.1,
            removal_fraction: 0.9,
            edits,
        }
    }

    #[test]
    fn detection_separates_perfectly() {
        let labeled: Vec<Triple> = (0..5).map(|i| Triple::new(i, 0, i + 1)).collect();
        let w = [0.9, 0.1, 0.8, 0.05, 0.7];
        let log = flips(vec![
            (labeled[1], Edit::AddedNegative),
            (labeled[3], Edit::AddedNegative),
            (Triple::new(9, 0, 9), Edit::RemovedPositive),
        ]);
        let r = detection_report(&labeled, &w, &log, None, DetectionOptions::default()).unwrap();
        assert!(r.applicable);
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.precision_at_n, Some((2, 1.0)));
        assert_eq!((r.added_in_labeled, r.genuine, r.removed), (2, 3, 1));
        assert_eq!(r.recall_at_n, None);
    }

    #[test]
    fn empty_flip_log_is_not_applicable() {
        let labeled = [Triple::new(0, 0, 1)];
        let r = detection_report(
            &labeled,
            &[0.5],
            &flips(vec![]),
            None,
            DetectionOptions::default(),
        )
        .unwrap();
        assert!(!r.applicable);
        assert!(r.to_table().contains("not applicable"));
    }
}
