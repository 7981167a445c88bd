//! Two published target clusters (a horse-riding one and a basketball one)
//! with their raw attribute lists and final descriptions.

use std::collections::{BTreeMap, BTreeSet};

use autolabel::discovery::{filter_profile, tfidf_scores, AttributeDocument, Owner};

const HORSE: &str = "horse fence fence person field people man dirt grass horse horse sand zebra horse \
    mountain person bush fence horse man tree sand water horse fence beach person people water man person hat \
    horse shirt bush sky person horse man mountain road bush horse sand zebra person horse water beach man water \
    fence woman horse building tree horse person beach bunch horse tree sand fence hat person water car beach horse";

const BASKETBALL: &str = "ball ball net hoop people basketball male sign ball basketball light gym white kite male \
    ball male door male female rack net ball ball court rack female hoop boy male gym ball people hoop basketball \
    basketball ball men hoop male court ball basketball net male ball ball door male hoop hoop rack male ball \
    people basketball male table white male ball ball court hoop net man net people hoop basket court net person \
    basketball basketball hoop basketball court ball ball court male men men gym net male female basket hoop ball \
    ball basket";

/// Background scenes sharing the horse cluster's incidental tokens.
const BEACH: &str = "sand beach bush zebra mountain hat";

struct Corpus {
    vocab: Vec<String>,
    documents: Vec<AttributeDocument>,
}

fn corpus(texts: &[&str]) -> Corpus {
    let mut vocab: Vec<String> = Vec::new();
    let mut documents = Vec::new();
    for (c, text) in texts.iter().enumerate() {
        let mut counts = BTreeMap::new();
        for token in text.split_whitespace() {
            let index = match vocab.iter().position(|v| v == token) {
                Some(i) => i,
                None => {
                    vocab.push(token.to_string());
                    vocab.len() - 1
                }
            };
            *counts.entry(index).or_insert(0u32) += 1;
        }
        documents.push(AttributeDocument { owner: Owner::Cluster(c), counts });
    }
    Corpus { vocab, documents }
}

fn final_attributes(corpus: &Corpus, doc: usize) -> BTreeSet<&str> {
    let scores = tfidf_scores(&corpus.documents);
    let profile = filter_profile(&corpus.documents[doc], &scores[doc], 0.5, 6, 20).unwrap();
    profile.attributes().into_iter().map(|a| corpus.vocab[a].as_str()).collect()
}

fn set<'a>(tokens: &[&'a str]) -> BTreeSet<&'a str> {
    tokens.iter().copied().collect()
}

#[test]
fn raw_lists_have_the_published_sizes() {
    let c = corpus(&[HORSE, BASKETBALL]);
    assert_eq!(c.documents[0].total(), 70);
    assert_eq!(c.documents[1].total(), 93);
}

#[test]
fn horse_cluster_most_frequent_tokens() {
    let c = corpus(&[HORSE]);
    let mut by_count: Vec<(u32, &str)> = c.documents[0].counts.iter().map(|(&a, &n)| (n, c.vocab[a].as_str())).collect();
    by_count.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    let top3: BTreeSet<&str> = by_count.iter().take(3).map(|x| x.1).collect();
    assert_eq!(top3, set(&["horse", "person", "fence"]));
    assert_eq!(&by_count[..3], &[(14, "horse"), (8, "person"), (6, "fence")]);
}

#[test]
fn basketball_cluster_description_is_reproduced() {
    let c = corpus(&[HORSE, BASKETBALL, BEACH]);
    assert_eq!(
        final_attributes(&c, 1),
        set(&["ball", "male", "basketball", "hoop", "net", "court"])
    );
}

#[test]
fn horse_cluster_description_needs_a_background_corpus() {
    let with_background = corpus(&[HORSE, BASKETBALL, BEACH]);
    assert_eq!(
        final_attributes(&with_background, 0),
        set(&["horse", "person", "fence", "man", "tree", "water"])
    );
    // Against the basketball cluster alone, `person` occurs in both and
    // scores 0, and the beach tokens keep their full weight.
    let pair = corpus(&[HORSE, BASKETBALL]);
    let found = final_attributes(&pair, 0);
    assert!(!found.contains("person"));
    assert!(found.contains("beach"));
}

#[test]
fn every_score_falls_below_the_default_threshold() {
    let c = corpus(&[HORSE, BASKETBALL, BEACH]);
    for scores in tfidf_scores(&c.documents) {
        assert!(scores.values().all(|&s| s < 0.5));
    }
}
