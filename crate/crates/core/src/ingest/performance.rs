use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{decode_utf8, IngestError, Subvertical, MAX_AD_DURATION_S, MIN_AD_DURATION_S};

pub const DWELL_HORIZON: usize = 10;

pub const PERFORMANCE_HEADER: &str = "video_id,impressions,dwell_1,dwell_2,dwell_3,dwell_4,dwell_5,dwell_6,dwell_7,dwell_8,dwell_9,dwell_10,ctr,cvr,has_speech,video_length_s,aspect_ratio,campaign_objective,audience_size,advertiser_size,subvertical";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignObjective {
    Awareness,
    Traffic,
    Engagement,
    Leads,
    AppPromotion,
    Sales,
}

impl CampaignObjective {
    pub const ALL: [CampaignObjective; 6] = [
        CampaignObjective::Awareness,
        CampaignObjective::Traffic,
        CampaignObjective::Engagement,
        CampaignObjective::Leads,
        CampaignObjective::AppPromotion,
        CampaignObjective::Sales,
    ];

    pub fn key(self) -> &'static str {
        match self {
            CampaignObjective::Awareness => "awareness",
            CampaignObjective::Traffic => "traffic",
            CampaignObjective::Engagement => "engagement",
            CampaignObjective::Leads => "leads",
            CampaignObjective::AppPromotion => "app_promotion",
            CampaignObjective::Sales => "sales",
        }
    }
}

impl FromStr for CampaignObjective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown campaign objective `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvertiserSize {
    Small,
    Medium,
    Large,
}

impl AdvertiserSize {
    pub const ALL: [AdvertiserSize; 3] =
        [AdvertiserSize::Small, AdvertiserSize::Medium, AdvertiserSize::Large];

    pub fn key(self) -> &'static str {
        match self {
            AdvertiserSize::Small => "small",
            AdvertiserSize::Medium => "medium",
            AdvertiserSize::Large => "large",
        }
    }
}

impl FromStr for AdvertiserSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown advertiser size `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub has_speech: bool,
    pub video_length_s: f64,
    pub aspect_ratio: f64,
    pub campaign_objective: CampaignObjective,
    pub audience_size: f64,
    pub advertiser_size: AdvertiserSize,
    pub subvertical: Subvertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub video_id: String,
    pub impressions: u64,
    /// Fraction of viewers still watching at seconds 1..=10.
    pub dwell: [f64; DWELL_HORIZON],
    pub ctr: f64,
    pub cvr: f64,
    pub covariates: Covariates,
}

impl PerformanceRecord {
    /// Row-level invariants. `row` is only used for error reporting.
    pub fn validate(&self, row: usize) -> Result<(), IngestError> {
        let out_of_range = |field: &str, value: String| IngestError::ValueOutOfRange {
            row,
            field: field.into(),
            value,
        };
        if self.video_id.trim().is_empty() {
            return Err(out_of_range("video_id", "<empty>".into()));
        }
        if self.impressions == 0 {
            return Err(out_of_range("impressions", "0".into()));
        }
        for (i, d) in self.dwell.iter().enumerate() {
            if !(0.0..=1.0).contains(d) {
                return Err(out_of_range(&format!("dwell_{}", i + 1), d.to_string()));
            }
        }
        for s in 1..DWELL_HORIZON {
            if self.dwell[s] > self.dwell[s - 1] {
                return Err(IngestError::DwellNotMonotone { row, second: s + 1 });
            }
        }
        for (name, v) in [("ctr", self.ctr), ("cvr", self.cvr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(out_of_range(name, v.to_string()));
            }
        }
        let c = &self.covariates;
        if !(c.video_length_s.is_finite() && c.video_length_s > 0.0) {
            return Err(out_of_range("video_length_s", c.video_length_s.to_string()));
        }
        if !(c.aspect_ratio.is_finite() && c.aspect_ratio > 0.0) {
            return Err(out_of_range("aspect_ratio", c.aspect_ratio.to_string()));
        }
        if !(c.audience_size.is_finite() && c.audience_size >= 0.0) {
            return Err(out_of_range("audience_size", c.audience_size.to_string()));
        }
        Ok(())
    }
}

/// A data row the loader refused, with the reason. `row` is 1-based and
/// excludes the header.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    pub row: usize,
    pub error: IngestError,
}

/// Optional record filters. Nothing is filtered by default; the length window
/// restricts ads to 15-60 s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdFilter {
    pub enforce_length_window: bool,
    pub min_impressions: Option<u64>,
}

impl AdFilter {
    pub fn admits(&self, record: &PerformanceRecord) -> bool {
        if self.enforce_length_window
            && !(MIN_AD_DURATION_S..=MAX_AD_DURATION_S).contains(&record.covariates.video_length_s)
        {
            return false;
        }
        self.min_impressions.is_none_or(|min| record.impressions >= min)
    }
}

/// Strict loader: fails on the first invalid row.
pub fn load_performance_records(bytes: &[u8]) -> Result<Vec<PerformanceRecord>, IngestError> {
    let (records, rejected) = load_performance_records_partial(bytes)?;
    match rejected.into_iter().next() {
        Some(r) => Err(r.error),
        None => Ok(records),
    }
}

/// Lenient loader: header problems are fatal, bad rows are returned
/// alongside the accepted ones.
pub fn load_performance_records_partial(
    bytes: &[u8],
) -> Result<(Vec<PerformanceRecord>, Vec<RowRejection>), IngestError> {
    let text = decode_utf8(bytes)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MissingColumn(e.to_string()))?
        .clone();
    let mut columns = Vec::new();
    for name in PERFORMANCE_HEADER.split(',') {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.into()))?;
        columns.push(pos);
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let parsed = row
            .map_err(|e| IngestError::BadValue {
                row: row_no,
                field: "<row>".into(),
                detail: e.to_string(),
            })
            .and_then(|r| parse_row(&r, &columns, row_no))
            .and_then(|rec| rec.validate(row_no).map(|_| rec));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(error) => rejected.push(RowRejection { row: row_no, error }),
        }
    }
    Ok((records, rejected))
}

fn parse_row(
    record: &csv::StringRecord,
    columns: &[usize],
    row: usize,
) -> Result<PerformanceRecord, IngestError> {
    let names: Vec<&str> = PERFORMANCE_HEADER.split(',').collect();
    let get = |k: usize| -> Result<&str, IngestError> {
        record
            .get(columns[k])
            .ok_or_else(|| IngestError::BadValue {
                row,
                field: names[k].into(),
                detail: "missing field".into(),
            })
    };
    fn parse<T: FromStr>(raw: &str, row: usize, field: &str) -> Result<T, IngestError>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse::<T>().map_err(|e| IngestError::BadValue {
            row,
            field: field.into(),
            detail: e.to_string(),
        })
    }
    let parse_bool = |raw: &str, field: &str| match raw.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(IngestError::BadValue {
            row,
            field: field.into(),
            detail: format!("expected true/false, got `{other}`"),
        }),
    };

    let mut dwell = [0.0; DWELL_HORIZON];
    for (s, slot) in dwell.iter_mut().enumerate() {
        *slot = parse(get(2 + s)?, row, names[2 + s])?;
    }
    Ok(PerformanceRecord {
        video_id: get(0)?.to_string(),
        impressions: parse(get(1)?, row, names[1])?,
        dwell,
        ctr: parse(get(12)?, row, names[12])?,
        cvr: parse(get(13)?, row, names[13])?,
        covariates: Covariates {
            has_speech: parse_bool(get(14)?, names[14])?,
            video_length_s: parse(get(15)?, row, names[15])?,
            aspect_ratio: parse(get(16)?, row, names[16])?,
            campaign_objective: parse(get(17)?, row, names[17])?,
            audience_size: parse(get(18)?, row, names[18])?,
            advertiser_size: parse(get(19)?, row, names[19])?,
            subvertical: parse(get(20)?, row, names[20])?,
        },
    })
}

pub fn write_performance_csv(records: &[PerformanceRecord]) -> String {
    let mut out = String::from(PERFORMANCE_HEADER);
    out.push('\n');
    for r in records {
        let c = &r.covariates;
        let mut fields = vec![r.video_id.clone(), r.impressions.to_string()];
        fields.extend(r.dwell.iter().map(|d| d.to_string()));
        fields.extend([
            r.ctr.to_string(),
            r.cvr.to_string(),
            c.has_speech.to_string(),
            c.video_length_s.to_string(),
            c.aspect_ratio.to_string(),
            c.campaign_objective.key().to_string(),
            c.audience_size.to_string(),
            c.advertiser_size.key().to_string(),
            c.subvertical.key().to_string(),
        ]);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, dwell: &[f64]) -> String {
        let d: Vec<String> = dwell.iter().map(|x| x.to_string()).collect();
        format!(
            "{id},1000,{},0.02,0.005,true,30,0.5625,sales,120000,large,beauty",
            d.join(",")
        )
    }

    #[test]
    fn constant_dwell_is_valid() {
        let csv = format!("{PERFORMANCE_HEADER}\n{}\n", row("a", &[1.0; 10]));
        let recs = load_performance_records(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].dwell, [1.0; 10]);
    }

    #[test]
    fn increasing_dwell_is_rejected() {
        let mut d = [0.5; 10];
        d[1] = 0.6;
        let csv = format!("{PERFORMANCE_HEADER}\n{}\n", row("a", &d));
        assert_eq!(
            load_performance_records(csv.as_bytes()),
            Err(IngestError::DwellNotMonotone { row: 1, second: 2 })
        );
    }

    #[test]
    fn missing_column_is_fatal() {
        let header = PERFORMANCE_HEADER.replace(",cvr", "");
        assert_eq!(
            load_performance_records(format!("{header}\n").as_bytes()),
            Err(IngestError::MissingColumn("cvr".into()))
        );
    }

    #[test]
    fn out_of_range_values() {
        let csv = format!("{PERFORMANCE_HEADER}\n{}\n", row("a", &[1.0; 10]).replace(",0.02,", ",1.5,"));
        assert!(matches!(
            load_performance_records(csv.as_bytes()),
            Err(IngestError::ValueOutOfRange { field, .. }) if field == "ctr"
        ));
        let csv = format!("{PERFORMANCE_HEADER}\n{}\n", row("a", &[1.0; 10]).replace(",1000,", ",0,"));
        assert!(matches!(
            load_performance_records(csv.as_bytes()),
            Err(IngestError::ValueOutOfRange { field, .. }) if field == "impressions"
        ));
    }

    #[test]
    fn columns_may_be_reordered() {
        let mut cols: Vec<&str> = PERFORMANCE_HEADER.split(',').collect();
        let line = row("a", &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0]);
        let mut vals: Vec<&str> = line.split(',').collect();
        cols.reverse();
        vals.reverse();
        let csv = format!("{}\n{}\n", cols.join(","), vals.join(","));
        let recs = load_performance_records(csv.as_bytes()).unwrap();
        assert_eq!(recs[0].dwell[9], 0.0);
        assert_eq!(recs[0].covariates.subvertical, Subvertical::Beauty);
    }

    #[test]
    fn filter_applies_length_window_and_min_impressions() {
        let csv = format!("{PERFORMANCE_HEADER}\n{}\n", row("a", &[1.0; 10]));
        let mut rec = load_performance_records(csv.as_bytes()).unwrap().remove(0);
        assert!(AdFilter::default().admits(&rec));
        let f = AdFilter {
            enforce_length_window: true,
            min_impressions: Some(1001),
        };
        assert!(!f.admits(&rec));
        rec.impressions = 5000;
        assert!(f.admits(&rec));
        rec.covariates.video_length_s = 61.0;
        assert!(!f.admits(&rec));
    }

    #[derive(Debug, Clone)]
    enum Fault {
        None,
        Increasing,
        CtrHigh,
        NegativeAudience,
        BadObjective,
        ZeroImpressions,
    }

    proptest! {
        #[test]
        fn loader_rejects_exactly_the_invalid_rows(
            rows in prop::collection::vec(
                (prop::sample::select(vec![
                    Fault::None, Fault::None, Fault::None, Fault::Increasing, Fault::CtrHigh,
                    Fault::NegativeAudience, Fault::BadObjective, Fault::ZeroImpressions,
                ]), prop::collection::vec(0.0f64..1.0, 10)),
                0..30,
            )
        ) {
            let mut csv = format!("{PERFORMANCE_HEADER}\n");
            let mut expected_bad = Vec::new();
            for (i, (fault, mut dwell)) in rows.iter().cloned().enumerate() {
                dwell.sort_by(|a, b| b.total_cmp(a));
                if matches!(fault, Fault::Increasing) {
                    dwell = vec![0.9, 0.8, 0.5, 0.6, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
                }
                let mut line = row(&format!("v{i}"), &dwell);
                match fault {
                    Fault::CtrHigh => line = line.replace(",0.02,", ",1.02,"),
                    Fault::NegativeAudience => line = line.replace(",120000,", ",-1,"),
                    Fault::BadObjective => line = line.replace(",sales,", ",world_domination,"),
                    Fault::ZeroImpressions => line = line.replace(",1000,", ",0,"),
                    _ => {}
                }
                if !matches!(fault, Fault::None) {
                    expected_bad.push(i + 1);
                }
                csv.push_str(&line);
                csv.push('\n');
            }
            let (ok, bad) = load_performance_records_partial(csv.as_bytes()).unwrap();
            let bad_rows: Vec<usize> = bad.iter().map(|r| r.row).collect();
            prop_assert_eq!(&bad_rows, &expected_bad);
            prop_assert_eq!(ok.len() + bad.len(), rows.len());
            // Accepted rows survive a write/load cycle field-exactly.
            let again = load_performance_records(write_performance_csv(&ok).as_bytes()).unwrap();
            prop_assert_eq!(again, ok);
        }
    }
}
