use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Corpus;
use crate::error::{DstError, Result};
use crate::rng;

/// Where auxiliary utterances come from.
#[derive(Clone, Debug)]
pub enum AuxSource {
    /// Newline-delimited text file, one utterance per non-blank line.
    File(PathBuf),
    /// Generated task-oriented chatter from domains the target corpus does
    /// not cover.
    Synthetic { seed: u64, size: usize },
    /// Explicit utterances.
    Lines(Vec<String>),
}

/// Every non-inserted utterance of `corpus`, in order.
pub fn target_utterances(corpus: &Corpus) -> Vec<String> {
    corpus
        .dialogues
        .iter()
        .flat_map(|d| d.original_turns().map(|t| t.text.clone()))
        .collect()
}

/// Builds a flat utterance pool from `sources`.
///
/// When `exclude` is given the pool is treated as auxiliary data and any
/// utterance that also occurs in that target corpus is dropped.
pub fn auxiliary_corpus(sources: &[AuxSource], exclude: Option<&Corpus>) -> Result<Vec<String>> {
    let mut pool = Vec::new();
    for source in sources {
        match source {
            AuxSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
                pool.extend(
                    text.lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_string),
                );
            }
            AuxSource::Synthetic { seed, size } => pool.extend(synthetic_pool(*seed, *size)),
            AuxSource::Lines(lines) => pool.extend(lines.iter().cloned()),
        }
    }
    if let Some(target) = exclude {
        let seen: HashSet<String> = target_utterances(target).into_iter().collect();
        pool.retain(|u| !seen.contains(u));
    }
    if pool.is_empty() {
        return Err(DstError::EmptyPool);
    }
    Ok(pool)
}

const AUX_FRAMES: [&str; 16] = [
    "i would like to book a flight to {place} on {day} .",
    "is there a direct flight from {place} ?",
    "what is the weather going to be like in {place} tomorrow ?",
    "can you find me a movie showing near {place} tonight ?",
    "i need to transfer some money to my savings account .",
    "please set an alarm for {time} .",
    "what time does the pharmacy close on {day} ?",
    "i want to rent a car in {place} for {n} days .",
    "are there any concerts in {place} this {day} ?",
    "book me a haircut appointment at {time} .",
    "how much is a return ticket to {place} ?",
    "could you play some relaxing music ?",
    "i lost my card , can you block it ?",
    "find me a bus to {place} leaving around {time} .",
    "remind me to call my mother on {day} .",
    "which gate does my flight leave from ?",
];
const AUX_REPLIES: [&str; 8] = [
    "sure , i can help you with that .",
    "i found {n} options for you .",
    "your request has been completed .",
    "could you confirm the date please ?",
    "there are no results for {place} , would you like to try another city ?",
    "the earliest one is at {time} .",
    "okay , anything else ?",
    "that will cost {n} dollars .",
];
const AUX_PLACES: [&str; 10] = [
    "boston", "seattle", "madrid", "toronto", "oakland", "denver", "lisbon", "chicago", "paris",
    "sydney",
];
const AUX_DAYS: [&str; 5] = ["monday", "friday", "saturday", "the weekend", "next week"];

fn synthetic_pool(seed: u64, size: usize) -> Vec<String> {
    let mut rng = rng::stream(seed, "auxiliary");
    (0..size)
        .map(|_| {
            let frame = if rng.gen_bool(0.6) {
                *AUX_FRAMES.choose(&mut rng).unwrap()
            } else {
                *AUX_REPLIES.choose(&mut rng).unwrap()
            };
            frame
                .replace("{place}", AUX_PLACES.choose(&mut rng).unwrap())
                .replace("{day}", AUX_DAYS.choose(&mut rng).unwrap())
                .replace("{time}", &format!("{}:{:02}", rng.gen_range(1..13), 5 * rng.gen_range(0..12)))
                .replace("{n}", &rng.gen_range(2..9).to_string())
        })
        .collect()
}
