use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gbt_fit, AnalyticsError, DesignMatrix, GbtModel, GbtParams};
use crate::ingest::{AdvertiserSize, CampaignObjective, PerformanceRecord, Subvertical};

pub const ARC_FEATURE_PREFIX: &str = "arc:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpliftMetric {
    #[serde(rename = "dwell_2s")]
    Dwell2s,
    #[serde(rename = "ctr")]
    Ctr,
    #[serde(rename = "cvr")]
    Cvr,
}

impl UpliftMetric {
    pub const ALL: [UpliftMetric; 3] = [UpliftMetric::Dwell2s, UpliftMetric::Ctr, UpliftMetric::Cvr];

    pub fn key(self) -> &'static str {
        match self {
            UpliftMetric::Dwell2s => "dwell_2s",
            UpliftMetric::Ctr => "ctr",
            UpliftMetric::Cvr => "cvr",
        }
    }

    pub fn value(self, r: &PerformanceRecord) -> f64 {
        match self {
            UpliftMetric::Dwell2s => r.dwell[1],
            UpliftMetric::Ctr => r.ctr,
            UpliftMetric::Cvr => r.cvr,
        }
    }
}

impl FromStr for UpliftMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown metric `{s}` (expected dwell_2s, ctr or cvr)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpliftParams {
    #[serde(flatten)]
    pub gbt: GbtParams,
    pub metrics: Vec<UpliftMetric>,
}

impl Default for UpliftParams {
    fn default() -> Self {
        UpliftParams {
            gbt: GbtParams::default(),
            metrics: UpliftMetric::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftRow {
    pub metric: UpliftMetric,
    pub subvertical: Subvertical,
    /// 1 is the strongest arc in its cell.
    pub rank: usize,
    pub arc_abbrev: String,
    /// PD(1) - PD(0) as a percentage of the cell's metric mean.
    pub uplift_pct: f64,
    pub uplift_abs: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub metric: UpliftMetric,
    pub subvertical: Subvertical,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub params: UpliftParams,
    pub features: Vec<String>,
    pub rows: Vec<UpliftRow>,
    pub skipped: Vec<SkippedCell>,
}

impl UpliftReport {
    pub fn top_rows(&self) -> impl Iterator<Item = &UpliftRow> {
        self.rows.iter().filter(|r| r.rank == 1)
    }

    pub fn top(&self, metric: UpliftMetric, subvertical: Subvertical) -> Option<&UpliftRow> {
        self.top_rows()
            .find(|r| r.metric == metric && r.subvertical == subvertical)
    }
}

/// Mean prediction with `feature` forced to each of `values`.
pub fn partial_dependence(
    model: &GbtModel,
    x: &DesignMatrix,
    feature: &str,
    values: &[f64],
) -> Result<Vec<(f64, f64)>, AnalyticsError> {
    let f = model
        .feature_index(feature)
        .ok_or_else(|| AnalyticsError::UnknownFeature(feature.to_string()))?;
    if x.columns() != model.feature_names.as_slice() {
        return Err(AnalyticsError::DimensionMismatch(
            "matrix columns differ from the model's features".into(),
        ));
    }
    let n = x.n_rows();
    if n == 0 {
        return Err(AnalyticsError::EmptyDataset);
    }
    let mut row = vec![0.0; x.n_cols()];
    Ok(values
        .iter()
        .map(|&v| {
            let total: f64 = (0..n)
                .map(|r| {
                    row.copy_from_slice(x.row(r));
                    row[f] = v;
                    model.predict(&row)
                })
                .sum();
            (v, total / n as f64)
        })
        .collect())
}

fn control_names() -> Vec<String> {
    let mut names: Vec<String> = ["has_speech", "video_length_s", "aspect_ratio", "audience_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(CampaignObjective::ALL.iter().map(|o| format!("objective_{}", o.key())));
    names.extend(AdvertiserSize::ALL.iter().map(|a| format!("advertiser_{}", a.key())));
    names
}

fn control_values(r: &PerformanceRecord) -> Vec<f64> {
    let c = &r.covariates;
    let flag = |b: bool| f64::from(u8::from(b));
    let mut v = vec![flag(c.has_speech), c.video_length_s, c.aspect_ratio, c.audience_size];
    v.extend(CampaignObjective::ALL.iter().map(|&o| flag(c.campaign_objective == o)));
    v.extend(AdvertiserSize::ALL.iter().map(|&a| flag(c.advertiser_size == a)));
    v
}

fn fit_cell(
    records: &[&PerformanceRecord],
    memberships: &BTreeMap<String, BTreeSet<String>>,
    metric: UpliftMetric,
    subvertical: Subvertical,
    params: &GbtParams,
) -> Result<Vec<UpliftRow>, AnalyticsError> {
    let arcs_of = |r: &PerformanceRecord| memberships.get(&r.video_id);
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        for a in arcs_of(r).into_iter().flatten() {
            *support.entry(a.as_str()).or_default() += 1;
        }
    }
    if support.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "{} arc(s) present, need at least 2",
            support.len()
        )));
    }
    let arcs: Vec<&str> = support.keys().copied().collect();
    let mut names: Vec<String> = arcs.iter().map(|a| format!("{ARC_FEATURE_PREFIX}{a}")).collect();
    names.extend(control_names());
    let mut x = DesignMatrix::new(names)?;
    for r in records {
        let member = arcs_of(r);
        let mut row: Vec<f64> = arcs
            .iter()
            .map(|a| f64::from(u8::from(member.is_some_and(|m| m.contains(*a)))))
            .collect();
        row.extend(control_values(r));
        x.push_row(&row)?;
    }
    let y: Vec<f64> = records.iter().map(|r| metric.value(r)).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(AnalyticsError::InsufficientData("metric mean is zero".into()));
    }
    let model = gbt_fit(&x, &y, params)?;

    let mut rows = Vec::with_capacity(arcs.len());
    for a in &arcs {
        let pd = partial_dependence(&model, &x, &format!("{ARC_FEATURE_PREFIX}{a}"), &[0.0, 1.0])?;
        let abs = pd[1].1 - pd[0].1;
        rows.push(UpliftRow {
            metric,
            subvertical,
            rank: 0,
            arc_abbrev: a.to_string(),
            uplift_pct: 100.0 * abs / mean,
            uplift_abs: abs,
            support: support[a],
        });
    }
    rows.sort_by(|a, b| {
        b.uplift_pct
            .total_cmp(&a.uplift_pct)
            .then_with(|| a.arc_abbrev.cmp(&b.arc_abbrev))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

/// Fits one boosted model per (metric, subvertical) cell and ranks the arcs
/// present in that cell by partial-dependence uplift.
/// `memberships` maps video id to the abbreviations of the arcs it matches.
pub fn rank_arc_uplift(
    records: &[PerformanceRecord],
    memberships: &BTreeMap<String, BTreeSet<String>>,
    params: &UpliftParams,
) -> Result<UpliftReport, AnalyticsError> {
    params.gbt.validate()?;
    let mut by_sub: BTreeMap<Subvertical, Vec<&PerformanceRecord>> = BTreeMap::new();
    for r in records {
        by_sub.entry(r.covariates.subvertical).or_default().push(r);
    }
    let cells: Vec<(UpliftMetric, Subvertical)> = params
        .metrics
        .iter()
        .flat_map(|&m| by_sub.keys().map(move |&s| (m, s)))
        .collect();
    let results: Vec<Result<Vec<UpliftRow>, AnalyticsError>> = cells
        .par_iter()
        .map(|&(m, s)| fit_cell(&by_sub[&s], memberships, m, s, &params.gbt))
        .collect();

    let mut report = UpliftReport {
        params: params.clone(),
        features: {
            let mut f = vec![format!("{ARC_FEATURE_PREFIX}<abbrev>")];
            f.extend(control_names());
            f
        },
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for ((metric, subvertical), res) in cells.into_iter().zip(results) {
        match res {
            Ok(rows) => report.rows.extend(rows),
            Err(AnalyticsError::InsufficientData(reason)) => report.skipped.push(SkippedCell {
                metric,
                subvertical,
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::{Covariates, DWELL_HORIZON};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) const ARCS: [&str; 4] = ["PAS", "HFBA", "SPA", "AIDA"];

    /// Food ads whose cvr rises by `effect` (a fraction of the base) when
    /// they contain PAS.
    pub(crate) fn planted(
        n: usize,
        effect: f64,
        seed: u64,
    ) -> (Vec<PerformanceRecord>, BTreeMap<String, BTreeSet<String>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = 0.02;
        let noise = Normal::new(0.0, 0.1 * base).unwrap();
        let mut recs = Vec::new();
        let mut arcs = BTreeMap::new();
        for i in 0..n {
            let id = format!("f{i:04}");
            let set: BTreeSet<String> = ARCS
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .map(|a| a.to_string())
                .collect();
            let length = rng.random_range(15.0..60.0);
            let cvr = base * (1.0 + effect * f64::from(u8::from(set.contains("PAS"))))
                + 0.00002 * (length - 37.5)
                + noise.sample(&mut rng);
            recs.push(PerformanceRecord {
                video_id: id.clone(),
                impressions: 5000,
                dwell: [0.5; DWELL_HORIZON],
                ctr: 0.01,
                cvr,
                covariates: Covariates {
                    has_speech: rng.random_bool(0.5),
                    video_length_s: length,
                    aspect_ratio: 0.5625,
                    campaign_objective: CampaignObjective::Sales,
                    audience_size: 1e5,
                    advertiser_size: AdvertiserSize::Small,
                    subvertical: Subvertical::Food,
                },
            });
            arcs.insert(id, set);
        }
        (recs, arcs)
    }

    #[test]
    fn planted_arc_ranks_first() {
        let (recs, arcs) = planted(400, 0.05, 11);
        let params = UpliftParams {
            metrics: vec![UpliftMetric::Cvr],
            ..UpliftParams::default()
        };
        let report = rank_arc_uplift(&recs, &arcs, &params).unwrap();
        let top = report.top(UpliftMetric::Cvr, Subvertical::Food).unwrap();
        assert_eq!(top.arc_abbrev, "PAS");
        assert!(top.uplift_pct > 2.0 && top.uplift_pct < 8.0, "{top:?}");
        assert_eq!(report.top_rows().count(), 1);
    }

    #[test]
    fn one_top_row_per_cell_and_single_arc_cells_skipped() {
        let (mut recs, mut arcs) = planted(60, 0.05, 3);
        for (i, r) in recs.iter_mut().enumerate().take(20) {
            r.covariates.subvertical = Subvertical::Beauty;
            arcs.insert(r.video_id.clone(), if i % 2 == 0 { BTreeSet::from(["PAS".to_string()]) } else { BTreeSet::new() });
        }
        let params = UpliftParams {
            gbt: GbtParams { rounds: 10, ..GbtParams::default() },
            ..UpliftParams::default()
        };
        let report = rank_arc_uplift(&recs, &arcs, &params).unwrap();
        assert_eq!(report.top_rows().count(), 3);
        assert!(report.top_rows().all(|r| r.subvertical == Subvertical::Food));
        assert_eq!(report.skipped.len(), 3);
        assert!(report.skipped.iter().all(|s| s.subvertical == Subvertical::Beauty));
    }

    #[test]
    fn pd_errors_and_flat_unused_feature() {
        let (recs, arcs) = planted(100, 0.05, 5);
        let rows: Vec<Vec<f64>> = recs
            .iter()
            .map(|r| vec![f64::from(u8::from(arcs[&r.video_id].contains("PAS"))), 7.0])
            .collect();
        let x = DesignMatrix::from_rows(vec!["pas".into(), "unused".into()], &rows).unwrap();
        let y: Vec<f64> = recs.iter().map(|r| r.cvr).collect();
        let model = gbt_fit(&x, &y, &GbtParams::default()).unwrap();
        assert!(!model.uses_feature(1));
        let pd = partial_dependence(&model, &x, "unused", &[-5.0, 0.0, 3.0, 1e9]).unwrap();
        assert!(pd.iter().all(|&(_, m)| m == pd[0].1));
        assert_eq!(
            partial_dependence(&model, &x, "nope", &[0.0]).unwrap_err(),
            AnalyticsError::UnknownFeature("nope".into())
        );
        let empty = DesignMatrix::new(vec!["pas".into(), "unused".into()]).unwrap();
        assert_eq!(partial_dependence(&model, &empty, "pas", &[0.0]).unwrap_err(), AnalyticsError::EmptyDataset);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("CVR".parse::<UpliftMetric>().unwrap(), UpliftMetric::Cvr);
        assert_eq!(serde_json::to_string(&UpliftMetric::Dwell2s).unwrap(), "\"dwell_2s\"");
        assert!("views".parse::<UpliftMetric>().is_err());
    }
}
