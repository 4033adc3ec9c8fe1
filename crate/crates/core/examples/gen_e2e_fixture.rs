//! Writes the five-video end-to-end fixture under
//! `crates/core/tests/fixtures/e2e/`. Output is fully deterministic.
//!
//! ```text
//! cargo run -p adstory-core --example gen_e2e_fixture
//! ```
//!
//! Golden outputs are refreshed separately with
//! `ADSTORY_BLESS=1 cargo test -p adstory-core --test e2e`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use adstory_core::ingest::{
    write_adframes, write_performance_csv, AdFramesHeader, AdvertiserSize, CampaignObjective, Covariates,
    PerformanceRecord, Subvertical,
};

const WIDTH: u32 = 16;
const HEIGHT: u32 = 9;
const FPS: f64 = 10.0;
const SCENE_S: f64 = 4.0;

struct Video {
    id: &'static str,
    subvertical: Subvertical,
    /// One spoken cue per scene.
    cues: [&'static str; 4],
    /// Extra visual cuts (seconds) that fall inside speech.
    inner_cuts: &'static [f64],
    perf: Perf,
}

struct Perf {
    impressions: u64,
    dwell_2: f64,
    ctr: f64,
    cvr: f64,
    objective: CampaignObjective,
    advertiser: AdvertiserSize,
    aspect_ratio: f64,
    audience: f64,
}

const PALETTE: [[u8; 3]; 6] = [
    [200, 40, 40],
    [40, 160, 60],
    [30, 60, 200],
    [230, 210, 40],
    [150, 40, 170],
    [20, 20, 20],
];

fn videos() -> Vec<Video> {
    vec![
        Video {
            id: "v01",
            subvertical: Subvertical::Food,
            cues: [
                "I struggled to get dinner ready on weeknights.",
                "It was a nightmare and my kids hated it.",
                "Until I found these quick meal kits.",
                "Now my family finally eats together.",
            ],
            inner_cuts: &[],
            perf: Perf {
                impressions: 52000,
                dwell_2: 0.71,
                ctr: 0.021,
                cvr: 0.0042,
                objective: CampaignObjective::Sales,
                advertiser: AdvertiserSize::Small,
                aspect_ratio: 0.5625,
                audience: 410000.0,
            },
        },
        Video {
            id: "v02",
            subvertical: Subvertical::Food,
            cues: [
                "Tired of soggy lunches at work?",
                "I was sick of it all the time.",
                "The solution is our crisp bento box.",
                "Tap the link to order today.",
            ],
            inner_cuts: &[],
            perf: Perf {
                impressions: 38000,
                dwell_2: 0.66,
                ctr: 0.018,
                cvr: 0.0039,
                objective: CampaignObjective::Sales,
                advertiser: AdvertiserSize::Medium,
                aspect_ratio: 0.5625,
                audience: 250000.0,
            },
        },
        Video {
            id: "v03",
            subvertical: Subvertical::Food,
            cues: [
                "Wait, did you know oats can taste like dessert?",
                "Made with organic oats because taste matters.",
                "We love it as a family.",
                "Tap to get yours.",
            ],
            inner_cuts: &[6.0],
            perf: Perf {
                impressions: 61000,
                dwell_2: 0.58,
                ctr: 0.015,
                cvr: 0.0027,
                objective: CampaignObjective::Awareness,
                advertiser: AdvertiserSize::Large,
                aspect_ratio: 1.0,
                audience: 900000.0,
            },
        },
        Video {
            id: "v04",
            subvertical: Subvertical::Food,
            cues: [
                "Stop scrolling, this is big.",
                "New flavors in a lightweight pack.",
                "Thousands of customers rated it five stars.",
                "Head to the store and order today.",
            ],
            inner_cuts: &[],
            perf: Perf {
                impressions: 47000,
                dwell_2: 0.55,
                ctr: 0.017,
                cvr: 0.0031,
                objective: CampaignObjective::Traffic,
                advertiser: AdvertiserSize::Large,
                aspect_ratio: 1.0,
                audience: 620000.0,
            },
        },
        Video {
            id: "v05",
            subvertical: Subvertical::Beauty,
            cues: [
                "I struggled with dry skin for years.",
                "Until I found this cream.",
                "My skin is finally glowing.",
                "Tap the link in bio.",
            ],
            inner_cuts: &[],
            perf: Perf {
                impressions: 29000,
                dwell_2: 0.69,
                ctr: 0.024,
                cvr: 0.0051,
                objective: CampaignObjective::Sales,
                advertiser: AdvertiserSize::Small,
                aspect_ratio: 0.5625,
                audience: 180000.0,
            },
        },
    ]
}

fn duration(v: &Video) -> f64 {
    SCENE_S * v.cues.len() as f64
}

/// Solid scene colour with a fixed horizontal ramp so frames are not flat.
fn frame(color: [u8; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity((WIDTH * HEIGHT * 3) as usize);
    for _ in 0..HEIGHT {
        for x in 0..WIDTH {
            for c in color {
                out.push(c.saturating_add((x * 2) as u8));
            }
        }
    }
    out
}

fn frames(v: &Video, index: usize) -> Vec<Vec<u8>> {
    let n = (duration(v) * FPS).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / FPS;
            let scene = (t / SCENE_S).floor() as usize;
            let extra = v.inner_cuts.iter().filter(|&&c| t >= c).count();
            frame(PALETTE[(index + scene + extra) % PALETTE.len()])
        })
        .collect()
}

fn srt_time(t: f64) -> String {
    let ms = (t * 1000.0).round() as u64;
    format!("{:02}:{:02}:{:02},{:03}", ms / 3_600_000, ms / 60_000 % 60, ms / 1000 % 60, ms % 1000)
}

fn srt(v: &Video) -> String {
    let mut out = String::new();
    for (k, cue) in v.cues.iter().enumerate() {
        let start = SCENE_S * k as f64 + 0.5;
        let end = SCENE_S * k as f64 + 3.6;
        writeln!(out, "{}\n{} --> {}\n{cue}\n", k + 1, srt_time(start), srt_time(end)).unwrap();
    }
    out
}

fn perf_record(v: &Video) -> PerformanceRecord {
    let p = &v.perf;
    let mut dwell = [0.0; 10];
    for (s, d) in dwell.iter_mut().enumerate() {
        let decay = 0.93f64.powi(s as i32 - 1);
        *d = if s == 0 { (p.dwell_2 + 0.12).min(1.0) } else { p.dwell_2 * decay };
        *d = (*d * 10_000.0).round() / 10_000.0;
    }
    PerformanceRecord {
        video_id: v.id.to_string(),
        impressions: p.impressions,
        dwell,
        ctr: p.ctr,
        cvr: p.cvr,
        covariates: Covariates {
            has_speech: true,
            video_length_s: duration(v),
            aspect_ratio: p.aspect_ratio,
            campaign_objective: p.objective,
            audience_size: p.audience,
            advertiser_size: p.advertiser,
            subvertical: v.subvertical,
        },
    }
}

fn config(videos: &[Video]) -> String {
    let mut out = String::from(
        "[project]\nname = \"e2e-fixture\"\nenforce_paper_filter = true\n\n\
         [ingest]\nperformance = \"perf.csv\"\n\n",
    );
    for v in videos {
        writeln!(
            out,
            "[[ingest.videos]]\nvideo_id = \"{id}\"\nsubvertical = \"{sv}\"\nframes = \"frames/{id}.adframes\"\ntranscript = \"transcripts/{id}.srt\"\n",
            id = v.id,
            sv = v.subvertical.key()
        )
        .unwrap();
    }
    out.push_str("[annotator]\nkind = \"lexicon\"\n\n");
    out.push_str("[analysis]\nrounds = 20\nmin_leaf = 1\nmetrics = [\"dwell_2s\", \"ctr\", \"cvr\"]\n");
    out
}

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
    fs::create_dir_all(root.join("frames"))?;
    fs::create_dir_all(root.join("transcripts"))?;
    let videos = videos();
    let header = AdFramesHeader::new(WIDTH, HEIGHT, FPS);
    for (i, v) in videos.iter().enumerate() {
        let file = fs::File::create(root.join(format!("frames/{}.adframes", v.id)))?;
        write_adframes(std::io::BufWriter::new(file), &header, frames(v, i))?;
        fs::write(root.join(format!("transcripts/{}.srt", v.id)), srt(v))?;
    }
    let perf: Vec<PerformanceRecord> = videos.iter().map(perf_record).collect();
    fs::write(root.join("perf.csv"), write_performance_csv(&perf))?;
    fs::write(root.join("config.toml"), config(&videos))?;
    println!("fixture written to {}", root.display());
    Ok(())
}
