//! Frame, transcript, summary and two-event temporal search.
//!
//! Every operation is a stateless read over the corpus. The text entry
//! points embed the query and delegate to the `*_by_vector` variants, which
//! are also what tests drive with hand-built vectors.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Corpus;
use crate::domain::{Embedding, KeyframeRecord, TranscriptInterval};
use crate::error::{Error, Result};
use crate::providers::Providers;
use crate::vectorstore::{KEYFRAMES, SUMMARIES, SearchHit, TRANSCRIPTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub frame_k: usize,
    pub transcript_k: usize,
    pub summary_k: usize,
    pub temporal_max_gap_s: f64,
    pub temporal_top_m: usize,
    pub w_pair: f64,
    pub w_avg: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            frame_k: 1000,
            transcript_k: 200,
            summary_k: 50,
            temporal_max_gap_s: 300.0,
            temporal_top_m: 10,
            w_pair: 10.0,
            w_avg: 5.0,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frame_k", self.frame_k),
            ("transcript_k", self.transcript_k),
            ("summary_k", self.summary_k),
            ("temporal_top_m", self.temporal_top_m),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        let reals = [
            ("temporal_max_gap_s", self.temporal_max_gap_s),
            ("w_pair", self.w_pair),
            ("w_avg", self.w_avg),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("{name} must be a positive number")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHit {
    #[serde(flatten)]
    pub keyframe: KeyframeRecord,
    pub score: f64,
}

/// Hits from one video, best first. `group_score` is the best hit's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoGroup {
    pub video_id: String,
    pub group_score: f64,
    pub hits: Vec<FrameHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHit {
    pub interval: TranscriptInterval,
    pub score: f64,
    /// Keyframes whose timestamp falls inside the interval's span.
    pub keyframes: Vec<KeyframeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryHit {
    pub video_id: String,
    pub summary_text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPair {
    pub t1_s: f64,
    pub t2_s: f64,
    pub kf1: String,
    pub kf2: String,
    pub s1: f64,
    pub s2: f64,
    pub pair_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalVideoScore {
    pub video_id: String,
    pub best_pair: TemporalPair,
    pub s_pair: f64,
    pub avg_top1: f64,
    pub avg_top2: f64,
    pub s_video: f64,
}

fn hit_order(a: &FrameHit, b: &FrameHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.keyframe.keyframe_id.cmp(&b.keyframe.keyframe_id))
}

/// Folds a ranked hit list into per-video groups ordered by best score, then
/// hit count (more first), then video id.
pub fn group_hits(hits: Vec<FrameHit>) -> Vec<VideoGroup> {
    let mut by_video: BTreeMap<String, Vec<FrameHit>> = BTreeMap::new();
    for hit in hits {
        by_video.entry(hit.keyframe.video_id.clone()).or_default().push(hit);
    }
    let mut groups: Vec<VideoGroup> = by_video
        .into_iter()
        .map(|(video_id, mut hits)| {
            hits.sort_by(hit_order);
            VideoGroup {
                video_id,
                group_score: hits[0].score,
                hits,
            }
        })
        .collect();
    groups.sort_by(|a, b| {
        b.group_score
            .total_cmp(&a.group_score)
            .then_with(|| b.hits.len().cmp(&a.hits.len()))
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    groups
}

/// Stable filter keeping only groups whose video is in `allowed`.
pub fn filter_groups_by_videos(groups: Vec<VideoGroup>, allowed: &BTreeSet<String>) -> Vec<VideoGroup> {
    groups.into_iter().filter(|g| allowed.contains(&g.video_id)).collect()
}

/// A pair is valid when E2 strictly follows E1 by at most `max_gap_s`.
pub fn pair_is_valid(t1_s: f64, t2_s: f64, max_gap_s: f64) -> bool {
    t2_s > t1_s && t2_s - t1_s <= max_gap_s
}

fn mean_top(hits: &[FrameHit], m: usize) -> f64 {
    let mut scores: Vec<f64> = hits.iter().map(|h| h.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let top = &scores[..m.min(scores.len())];
    top.iter().sum::<f64>() / top.len() as f64
}

/// Scores one video from its E1 and E2 hits:
/// `s_video = w_pair · s_pair + w_avg · (avg_top1 + avg_top2)`, where
/// `s_pair` is the best `(s1 + s2) / 2` over valid pairs and the averages
/// run over each event's top `temporal_top_m` scores.
///
/// Equal pair scores resolve to the earliest `t1`, then earliest `t2`, then
/// keyframe ids.
pub fn score_temporal_video(
    video_id: &str,
    hits1: &[FrameHit],
    hits2: &[FrameHit],
    config: &QueryConfig,
) -> Result<TemporalVideoScore> {
    let mut best: Option<TemporalPair> = None;
    for h1 in hits1 {
        for h2 in hits2 {
            let (t1, t2) = (h1.keyframe.timestamp_s, h2.keyframe.timestamp_s);
            if !pair_is_valid(t1, t2, config.temporal_max_gap_s) {
                continue;
            }
            let pair = TemporalPair {
                t1_s: t1,
                t2_s: t2,
                kf1: h1.keyframe.keyframe_id.clone(),
                kf2: h2.keyframe.keyframe_id.clone(),
                s1: h1.score,
                s2: h2.score,
                pair_score: (h1.score + h2.score) / 2.0,
            };
            let better = match &best {
                None => true,
                Some(b) => pair
                    .pair_score
                    .total_cmp(&b.pair_score)
                    .then_with(|| b.t1_s.total_cmp(&pair.t1_s))
                    .then_with(|| b.t2_s.total_cmp(&pair.t2_s))
                    .then_with(|| b.kf1.cmp(&pair.kf1))
                    .then_with(|| b.kf2.cmp(&pair.kf2))
                    .is_gt(),
            };
            if better {
                best = Some(pair);
            }
        }
    }
    let best_pair = best.ok_or_else(|| Error::NoPair(video_id.to_owned()))?;
    let s_pair = best_pair.pair_score;
    let avg_top1 = mean_top(hits1, config.temporal_top_m);
    let avg_top2 = mean_top(hits2, config.temporal_top_m);
    Ok(TemporalVideoScore {
        video_id: video_id.to_owned(),
        best_pair,
        s_pair,
        avg_top1,
        avg_top2,
        s_video: config.w_pair * s_pair + config.w_avg * (avg_top1 + avg_top2),
    })
}

/// Combines the grouped results of two independent frame searches into a
/// ranked list of videos holding a valid E1 → E2 pair.
pub fn pair_groups(groups1: &[VideoGroup], groups2: &[VideoGroup], config: &QueryConfig) -> Vec<TemporalVideoScore> {
    let second: BTreeMap<&str, &VideoGroup> = groups2.iter().map(|g| (g.video_id.as_str(), g)).collect();
    let mut out: Vec<TemporalVideoScore> = groups1
        .iter()
        .filter_map(|g1| {
            let g2 = second.get(g1.video_id.as_str())?;
            score_temporal_video(&g1.video_id, &g1.hits, &g2.hits, config).ok()
        })
        .collect();
    out.sort_by(|a, b| b.s_video.total_cmp(&a.s_video).then_with(|| a.video_id.cmp(&b.video_id)));
    out
}

fn casefold(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// The four search modes over one corpus.
pub struct QueryEngine<'a> {
    corpus: &'a Corpus,
    providers: &'a Providers,
    config: QueryConfig,
}

impl<'a> QueryEngine<'a> {
    pub fn new(corpus: &'a Corpus, providers: &'a Providers, config: QueryConfig) -> Result<Self> {
        config.validate()?;
        Ok(QueryEngine {
            corpus,
            providers,
            config,
        })
    }

    pub fn config(&self) -> &QueryConfig {
        &self.config
    }

    fn require_query(query: &str) -> Result<()> {
        if query.trim().is_empty() {
            return Err(Error::invalid("query must be non-empty"));
        }
        Ok(())
    }

    /// Embeds a query for the keyframe collection. Keyframe vectors live in
    /// the image model's space, so its text tower encodes the query.
    pub fn encode_frame_query(&self, query: &str) -> Result<Embedding> {
        Self::require_query(query)?;
        self.providers.image.embed_text(query)
    }

    pub fn encode_text_query(&self, query: &str) -> Result<Embedding> {
        Self::require_query(query)?;
        self.providers.text.embed_text(query)
    }

    pub fn frame_search(&self, query: &str) -> Result<Vec<VideoGroup>> {
        self.frame_search_by_vector(&self.encode_frame_query(query)?)
    }

    /// Raw top `frame_k` keyframe hits, best first.
    pub fn frame_hits(&self, query: &Embedding) -> Result<Vec<FrameHit>> {
        let hits = self.corpus.vectors().search(KEYFRAMES, query, self.config.frame_k, None)?;
        Ok(hits
            .into_iter()
            .filter_map(|hit| {
                let video = self.corpus.video(video_of(&hit)?)?;
                Some(FrameHit {
                    keyframe: video.keyframe(&hit.id)?.clone(),
                    score: hit.score,
                })
            })
            .collect())
    }

    pub fn frame_search_by_vector(&self, query: &Embedding) -> Result<Vec<VideoGroup>> {
        Ok(group_hits(self.frame_hits(query)?))
    }

    pub fn transcript_search(&self, query: &str, keyword: Option<&str>) -> Result<Vec<TranscriptHit>> {
        self.transcript_search_by_vector(&self.encode_text_query(query)?, keyword)
    }

    /// Top `transcript_k` intervals, optionally narrowed to those whose
    /// cleaned text contains `keyword` ignoring case.
    pub fn transcript_search_by_vector(&self, query: &Embedding, keyword: Option<&str>) -> Result<Vec<TranscriptHit>> {
        let needle = keyword.map(casefold);
        let hits = self.corpus.vectors().search(TRANSCRIPTS, query, self.config.transcript_k, None)?;
        Ok(hits
            .into_iter()
            .filter_map(|hit| {
                let video = self.corpus.video(video_of(&hit)?)?;
                let interval = video.interval(&hit.id)?.clone();
                if needle.as_ref().is_some_and(|n| !casefold(&interval.cleaned_text).contains(n.as_str())) {
                    return None;
                }
                let keyframes = video.entry().keyframes_between(interval.start_s, interval.end_s);
                Some(TranscriptHit {
                    interval,
                    score: hit.score,
                    keyframes,
                })
            })
            .collect())
    }

    pub fn summary_search(&self, query: &str) -> Result<Vec<SummaryHit>> {
        self.summary_search_by_vector(&self.encode_text_query(query)?)
    }

    pub fn summary_search_by_vector(&self, query: &Embedding) -> Result<Vec<SummaryHit>> {
        let hits = self.corpus.vectors().search(SUMMARIES, query, self.config.summary_k, None)?;
        Ok(hits
            .into_iter()
            .filter_map(|hit| {
                let video = self.corpus.video(video_of(&hit)?)?;
                let summary = video.entry().summary.as_ref()?;
                Some(SummaryHit {
                    video_id: summary.video_id.clone(),
                    summary_text: summary.summary_text.clone(),
                    score: hit.score,
                })
            })
            .collect())
    }

    pub fn temporal_search(&self, e1: &str, e2: &str) -> Result<Vec<TemporalVideoScore>> {
        let q1 = self.encode_frame_query(e1)?;
        let q2 = self.encode_frame_query(e2)?;
        self.temporal_search_by_vector(&q1, &q2)
    }

    pub fn temporal_search_by_vector(&self, e1: &Embedding, e2: &Embedding) -> Result<Vec<TemporalVideoScore>> {
        let groups1 = self.frame_search_by_vector(e1)?;
        let groups2 = self.frame_search_by_vector(e2)?;
        Ok(pair_groups(&groups1, &groups2, &self.config))
    }
}

fn video_of(hit: &SearchHit) -> Option<&str> {
    hit.metadata.get("video_id").map(String::as_str)
}
