use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ols_fit, AnalyticsError, DesignMatrix};
use crate::ingest::{CampaignObjective, PerformanceRecord, DWELL_HORIZON};

pub const MIN_DWELL_RECORDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellCoefficient {
    pub second: usize,
    /// Story coefficient in percentage points.
    pub coef_pp: f64,
    /// Standard error of `coef_pp`, also in percentage points.
    pub std_err_pp: f64,
    pub n: usize,
    /// Mean dwell fraction of non-story ads at this second.
    pub baseline_nonstory_dwell: f64,
    /// Coefficient divided by the non-story baseline; absent when the
    /// baseline is zero.
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Design columns actually used, intercept first.
    pub columns: Vec<String>,
    /// Objective level absorbed into the intercept.
    pub reference_objective: Option<String>,
    pub per_second: Vec<DwellCoefficient>,
}

impl RegressionResult {
    /// Second with the largest story coefficient.
    pub fn peak_second(&self) -> Option<usize> {
        self.per_second
            .iter()
            .max_by(|a, b| a.coef_pp.total_cmp(&b.coef_pp))
            .map(|c| c.second)
    }
}

/// Regresses dwell at each second on the story flag plus video controls.
/// Records without an entry in `has_story` are left out.
pub fn story_dwell_uplift(
    records: &[PerformanceRecord],
    has_story: &BTreeMap<String, bool>,
) -> Result<RegressionResult, AnalyticsError> {
    let rows: Vec<(&PerformanceRecord, bool)> = records
        .iter()
        .filter_map(|r| has_story.get(&r.video_id).map(|&s| (r, s)))
        .collect();
    if rows.len() < MIN_DWELL_RECORDS {
        return Err(AnalyticsError::InsufficientData(format!(
            "{} records with a story verdict, need at least {MIN_DWELL_RECORDS}",
            rows.len()
        )));
    }
    let stories = rows.iter().filter(|(_, s)| *s).count();
    if stories == 0 || stories == rows.len() {
        return Err(AnalyticsError::OneClassOnly);
    }

    // Most frequent objective becomes the reference level; ties go to the
    // earlier level in declaration order.
    let mut counts: BTreeMap<CampaignObjective, usize> = BTreeMap::new();
    for (r, _) in &rows {
        *counts.entry(r.covariates.campaign_objective).or_default() += 1;
    }
    let reference = CampaignObjective::ALL
        .into_iter()
        .max_by(|a, b| {
            counts
                .get(a)
                .unwrap_or(&0)
                .cmp(counts.get(b).unwrap_or(&0))
                .then_with(|| b.cmp(a))
        })
        .expect("non-empty");

    let mut candidates: Vec<(String, Vec<f64>)> = vec![
        ("has_speech".into(), rows.iter().map(|(r, _)| f64::from(u8::from(r.covariates.has_speech))).collect()),
        ("video_length_s".into(), rows.iter().map(|(r, _)| r.covariates.video_length_s).collect()),
        ("aspect_ratio".into(), rows.iter().map(|(r, _)| r.covariates.aspect_ratio).collect()),
        ("audience_size".into(), rows.iter().map(|(r, _)| r.covariates.audience_size).collect()),
    ];
    for o in CampaignObjective::ALL.into_iter().filter(|&o| o != reference) {
        candidates.push((
            format!("objective_{}", o.key()),
            rows.iter()
                .map(|(r, _)| f64::from(u8::from(r.covariates.campaign_objective == o)))
                .collect(),
        ));
    }
    // Constant controls are indistinguishable from the intercept.
    candidates.retain(|(_, v)| v.iter().any(|&x| x != v[0]));

    let mut names = vec!["intercept".to_string(), "has_story".to_string()];
    names.extend(candidates.iter().map(|(n, _)| n.clone()));
    let mut x = DesignMatrix::new(names)?;
    for (i, (_, story)) in rows.iter().enumerate() {
        let mut row = vec![1.0, f64::from(u8::from(*story))];
        row.extend(candidates.iter().map(|(_, v)| v[i]));
        x.push_row(&row)?;
    }

    let nonstory = (rows.len() - stories) as f64;
    let mut per_second = Vec::with_capacity(DWELL_HORIZON);
    for s in 0..DWELL_HORIZON {
        let y: Vec<f64> = rows.iter().map(|(r, _)| r.dwell[s]).collect();
        let fit = ols_fit(&x, &y)?;
        let (coef, se) = fit.coef("has_story").expect("column present");
        let baseline = rows
            .iter()
            .filter(|(_, story)| !story)
            .map(|(r, _)| r.dwell[s])
            .sum::<f64>()
            / nonstory;
        per_second.push(DwellCoefficient {
            second: s + 1,
            coef_pp: 100.0 * coef,
            std_err_pp: 100.0 * se,
            n: rows.len(),
            baseline_nonstory_dwell: baseline,
            relative_change: (baseline != 0.0).then(|| coef / baseline),
        });
    }
    Ok(RegressionResult {
        columns: x.columns().to_vec(),
        reference_objective: Some(reference.key().to_string()),
        per_second,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::{AdvertiserSize, Covariates, Subvertical};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Records whose dwell at second 2 carries a planted story effect.
    pub(crate) fn planted(n: usize, effect: f64, seed: u64) -> (Vec<PerformanceRecord>, BTreeMap<String, bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut recs = Vec::new();
        let mut flags = BTreeMap::new();
        for i in 0..n {
            let story = rng.random_bool(0.5);
            let has_speech = rng.random_bool(0.7);
            let length = rng.random_range(15.0..60.0);
            let objective = CampaignObjective::ALL[rng.random_range(0..6)];
            let mut dwell = [0.0; DWELL_HORIZON];
            for (s, d) in dwell.iter_mut().enumerate() {
                let base = 0.8 * 0.9f64.powi(s as i32) + 0.02 * f64::from(u8::from(has_speech)) - 0.001 * length;
                let bump = if s == 1 && story { effect } else { 0.0 };
                *d = base + bump + noise.sample(&mut rng);
            }
            let id = format!("v{i:05}");
            flags.insert(id.clone(), story);
            recs.push(PerformanceRecord {
                video_id: id,
                impressions: 1000,
                dwell,
                ctr: 0.01,
                cvr: 0.001,
                covariates: Covariates {
                    has_speech,
                    video_length_s: length,
                    aspect_ratio: if rng.random_bool(0.5) { 0.5625 } else { 1.0 },
                    campaign_objective: objective,
                    audience_size: rng.random_range(1e4..1e6),
                    advertiser_size: AdvertiserSize::Medium,
                    subvertical: Subvertical::Food,
                },
            });
        }
        (recs, flags)
    }

    #[test]
    fn recovers_planted_effect() {
        let (recs, flags) = planted(2000, 0.05, 1);
        let res = story_dwell_uplift(&recs, &flags).unwrap();
        assert_eq!(res.per_second.len(), 10);
        assert!((res.per_second[1].coef_pp - 5.0).abs() < 0.5, "{:?}", res.per_second[1]);
        assert_eq!(res.peak_second(), Some(2));
        assert!(res.per_second.iter().all(|c| c.n == 2000));
        // Advertiser size is constant here and never a control anyway.
        assert!(!res.columns.iter().any(|c| c.contains("advertiser")));
        let ref_col = format!("objective_{}", res.reference_objective.as_deref().unwrap());
        assert!(!res.columns.contains(&ref_col));
    }

    #[test]
    fn error_cases() {
        let (recs, flags) = planted(40, 0.05, 2);
        let all_false: BTreeMap<String, bool> = flags.keys().map(|k| (k.clone(), false)).collect();
        assert_eq!(story_dwell_uplift(&recs, &all_false).unwrap_err(), AnalyticsError::OneClassOnly);
        assert!(matches!(
            story_dwell_uplift(&recs[..29], &flags),
            Err(AnalyticsError::InsufficientData(_))
        ));
        assert!(matches!(
            story_dwell_uplift(&recs, &BTreeMap::new()),
            Err(AnalyticsError::InsufficientData(_))
        ));
    }
}
