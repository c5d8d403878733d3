//! Deterministic synthetic manifests for tests and examples.
//!
//! Transcripts are made of pseudo-Vietnamese syllables so that character
//! 3-grams are varied and no two intervals share long runs of text.

use std::fs;
use std::path::Path;

use mervin_core::domain::{Shot, TranscriptSegment, VideoMeta};
use mervin_core::ingest::VideoManifest;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSETS: &[&str] = &[
    "b", "c", "ch", "d", "đ", "g", "gi", "h", "kh", "l", "m", "n", "ng", "nh", "ph", "qu", "s", "t", "th", "tr", "v", "x",
];
const VOWELS: &[&str] = &[
    "a", "á", "à", "ả", "ã", "ạ", "ă", "â", "e", "é", "ê", "ế", "i", "í", "o", "ó", "ô", "ố", "ơ", "ờ", "u", "ú", "ư", "ứ", "y",
];
const CODAS: &[&str] = &["", "", "c", "ch", "m", "n", "ng", "nh", "p", "t", "i", "o", "u"];

pub fn syllable(rng: &mut impl Rng) -> String {
    let pick = |rng: &mut dyn rand::RngCore, xs: &[&str]| xs[rng.random_range(0..xs.len())].to_owned();
    pick(rng, ONSETS) + &pick(rng, VOWELS) + &pick(rng, CODAS)
}

pub fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(6..11);
    let mut words: Vec<String> = (0..n).map(|_| syllable(rng)).collect();
    if let Some(first) = words.first_mut() {
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            *first = c.to_uppercase().chain(chars).collect();
        }
    }
    words.join(" ") + "."
}

/// Video id in the competition's `Lxx_Vyyy` style.
pub fn video_id(i: usize) -> String {
    format!("L{:02}_V{:03}", i / 100 + 1, i % 100 + 1)
}

/// One synthetic video: 6 to 14 contiguous shots and 2 to 6 second ASR
/// segments covering the whole duration.
pub fn manifest(video_id: &str, seed: u64) -> VideoManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fps = if rng.random_bool(0.5) { 25.0 } else { 30.0 };
    let mut shots = Vec::new();
    let mut start = 0u64;
    for _ in 0..rng.random_range(6..15) {
        let len = rng.random_range(40..400);
        shots.push(Shot::new(start, start + len - 1).expect("ordered"));
        start += len;
    }
    let duration_s = start as f64 / fps;
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < duration_s {
        let end = (t + rng.random_range(2.0..6.0)).min(duration_s);
        segments.push(TranscriptSegment {
            ordinal: segments.len() as u32,
            start_s: t,
            end_s: end,
            raw_text: sentence(&mut rng),
        });
        t = end;
    }
    VideoManifest {
        meta: VideoMeta {
            video_id: video_id.to_owned(),
            fps,
            duration_s,
            source_url: format!("https://www.youtube.com/watch?v={video_id}"),
            title: Some(format!("Bản tin {video_id}")),
        },
        shots,
        segments,
    }
}

/// `n` videos with ids from [`video_id`], seeded from `seed`.
pub fn corpus(n: usize, seed: u64) -> Vec<VideoManifest> {
    (0..n).map(|i| manifest(&video_id(i), seed.wrapping_mul(1_000_003).wrapping_add(i as u64))).collect()
}

/// Writes one `<video_id>.json` per manifest into `dir`.
pub fn write_manifests(dir: &Path, manifests: &[VideoManifest]) {
    fs::create_dir_all(dir).expect("create manifest dir");
    for m in manifests {
        let json = serde_json::to_vec_pretty(m).expect("manifest serializes");
        fs::write(dir.join(format!("{}.json", m.meta.video_id)), json).expect("write manifest");
    }
}
