//! In-context learning with solved examples prepended to the query.

use rand::seq::index;

use super::t2t::{decode_t2t, predict_pt_ts, prediction_from_decode};
use super::trained::{prompt_ids, MethodConfig};
use super::{Method, Prediction};
use crate::backbone::tokenizer::{tokenize, BOS, EOS, SEP};
use crate::backbone::LanguageModel;
use crate::data::{assemble_prompt, Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::trie::LabelTrie;

fn example_block(s: &Sample, taxonomy: &Taxonomy) -> Vec<u32> {
    let mut out = tokenize(assemble_prompt(s).as_bytes());
    out.push(BOS);
    for (k, &l) in s.labels.iter().enumerate() {
        if k > 0 {
            out.push(SEP);
        }
        out.extend(tokenize(taxonomy.name(l).as_bytes()));
    }
    out.push(EOS);
    out.push(u32::from(b'\n'));
    out
}

/// `n` seeded-random training examples followed by the query prompt, fitted
/// into `budget` tokens (the BOS that opens the answer included). Oldest
/// examples are dropped first when the context is too long.
pub fn nshot_prompt(
    train: &[&Sample],
    query: &Sample,
    n: usize,
    seed: u64,
    taxonomy: &Taxonomy,
    budget: usize,
) -> Result<Vec<u32>> {
    if budget < 2 {
        return Err(Error::Config("context budget too small for a query".into()));
    }
    let pool: Vec<&Sample> = train.iter().copied().filter(|s| s.id != query.id).collect();
    let mut rng = rng_for(seed, &format!("nshot-{}", query.id));
    let picks = index::sample(&mut rng, pool.len(), n.min(pool.len()));
    let mut blocks: Vec<Vec<u32>> = picks.into_iter().map(|i| example_block(pool[i], taxonomy)).collect();
    let q = prompt_ids(query, budget - 1)?;
    let fits = |bs: &[Vec<u32>]| bs.iter().map(Vec::len).sum::<usize>() + q.len() < budget;
    let before = blocks.len();
    while !blocks.is_empty() && !fits(&blocks) {
        blocks.remove(0);
    }
    if blocks.len() < before {
        log::warn!(
            "dropped {} of {before} examples for sample {} to fit the context",
            before - blocks.len(),
            query.id
        );
    }
    let mut out: Vec<u32> = blocks.concat();
    out.extend(q);
    Ok(out)
}

/// Greedy decode of the assembled context, with the trie when given.
pub fn nshot_predict(
    model: &dyn LanguageModel,
    taxonomy: &Taxonomy,
    train: &[&Sample],
    query: &Sample,
    trie: Option<&LabelTrie>,
    cfg: &MethodConfig,
) -> Result<Prediction> {
    let reserve = match trie {
        Some(t) => t.max_tokens(cfg.max_labels),
        None => cfg.max_new_tokens,
    };
    let budget = model
        .config()
        .max_seq
        .checked_sub(reserve)
        .filter(|&b| b >= 2)
        .ok_or_else(|| Error::Config("max_seq leaves no room for the query".into()))?;
    let ctx = nshot_prompt(train, query, cfg.n_shot, cfg.seed, taxonomy, budget)?;
    match trie {
        Some(t) => predict_pt_ts(model, None, &ctx, t, taxonomy, cfg.max_labels, Method::NShotTs),
        None => Ok(prediction_from_decode(
            Method::NShot,
            decode_t2t(model, None, &ctx, taxonomy, cfg.max_new_tokens)?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, labels: Vec<usize>) -> Sample {
        Sample {
            id: id.into(),
            name: format!("Firm {id}"),
            keywords: vec!["k".into()],
            description: "does things".into(),
            labels,
        }
    }

    #[test]
    fn zero_shot_is_bare_query() {
        let tax = Taxonomy::new(vec!["A".into(), "B".into()]).unwrap();
        let train = [sample("a", vec![0]), sample("b", vec![1])];
        let refs: Vec<&Sample> = train.iter().collect();
        let q = sample("q", vec![0]);
        let ctx = nshot_prompt(&refs, &q, 0, 1, &tax, 500).unwrap();
        assert_eq!(ctx, tokenize(assemble_prompt(&q).as_bytes()));
    }

    #[test]
    fn examples_dropped_to_fit() {
        let tax = Taxonomy::new(vec!["A".into(), "B".into()]).unwrap();
        let train = [sample("a", vec![0]), sample("b", vec![1]), sample("c", vec![0, 1])];
        let refs: Vec<&Sample> = train.iter().collect();
        let q = sample("q", vec![0]);
        let qlen = assemble_prompt(&q).len();
        let full = nshot_prompt(&refs, &q, 3, 1, &tax, 10_000).unwrap();
        assert!(full.len() > qlen * 3);
        let tight = nshot_prompt(&refs, &q, 3, 1, &tax, qlen + 60).unwrap();
        assert!(tight.len() < qlen + 60);
        assert!(tight.ends_with(&tokenize(assemble_prompt(&q).as_bytes())));
    }

    #[test]
    fn query_never_its_own_example() {
        let tax = Taxonomy::new(vec!["A".into()]).unwrap();
        let train = [sample("q", vec![0])];
        let refs: Vec<&Sample> = train.iter().collect();
        let ctx = nshot_prompt(&refs, &train[0], 5, 0, &tax, 1000).unwrap();
        assert_eq!(ctx, tokenize(assemble_prompt(&train[0]).as_bytes()));
    }
}
