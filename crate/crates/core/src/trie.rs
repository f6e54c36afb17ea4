//! Token trie over label names for constrained decoding.
//!
//! Decoding walks from the root (the BOS position) along label bytes. At the
//! end of a complete label the model may emit SEP, which records the label
//! and restarts at the root, or EOS, which records it and stops. Labels
//! already produced are hidden through an overlay in [`DecodeState`]; the
//! trie itself is never mutated, so one trie serves any number of decodes.

use std::collections::{BTreeMap, BTreeSet};

use crate::backbone::tokenizer::{tokenize, EOS, SEP};
use crate::data::Taxonomy;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<u32, usize>,
    /// Sorted label indices spelled by some path through this node.
    below: Vec<usize>,
    /// Label completed exactly at this node.
    terminal: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTrie {
    nodes: Vec<Node>,
    label_tokens: Vec<Vec<u32>>,
}

pub const ROOT: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeState {
    pub node: usize,
    pub removed: BTreeSet<usize>,
    pub emitted: Vec<usize>,
    pub finished: bool,
}

impl DecodeState {
    pub fn new() -> Self {
        Self {
            node: ROOT,
            removed: BTreeSet::new(),
            emitted: Vec::new(),
            finished: false,
        }
    }
}

impl Default for DecodeState {
    fn default() -> Self {
        Self::new()
    }
}

impl LabelTrie {
    pub fn build(taxonomy: &Taxonomy) -> Result<Self> {
        Self::from_labels(taxonomy.labels())
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("cannot build a trie without labels".into()));
        }
        let mut trie = Self {
            nodes: vec![Node::default()],
            label_tokens: Vec::with_capacity(labels.len()),
        };
        for (idx, label) in labels.iter().enumerate() {
            let tokens = tokenize(label.as_ref().as_bytes());
            if tokens.is_empty() {
                return Err(Error::Data(format!("label {idx} is empty")));
            }
            let mut node = ROOT;
            trie.nodes[ROOT].below.push(idx);
            for &t in &tokens {
                let next = match trie.nodes[node].children.get(&t) {
                    Some(&n) => n,
                    None => {
                        trie.nodes.push(Node::default());
                        let n = trie.nodes.len() - 1;
                        trie.nodes[node].children.insert(t, n);
                        n
                    }
                };
                node = next;
                trie.nodes[node].below.push(idx);
            }
            if trie.nodes[node].terminal.replace(idx).is_some() {
                return Err(Error::DuplicateLabel(label.as_ref().to_owned()));
            }
            trie.label_tokens.push(tokens);
        }
        Ok(trie)
    }

    pub fn num_labels(&self) -> usize {
        self.label_tokens.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn label_tokens(&self, label: usize) -> &[u32] {
        &self.label_tokens[label]
    }

    /// Every label spelled by a root-to-terminal path, in path order.
    pub fn enumerate_paths(&self) -> Vec<(Vec<u32>, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(l) = self.nodes[node].terminal {
                out.push((path.clone(), l));
            }
            for (&t, &child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(t);
                stack.push((child, p));
            }
        }
        out
    }

    fn has_live_label(&self, node: usize, removed: &BTreeSet<usize>) -> bool {
        self.nodes[node].below.iter().any(|l| !removed.contains(l))
    }

    /// Tokens that keep the decode on a path to a label not yet produced,
    /// ascending by id.
    pub fn allowed_tokens(&self, state: &DecodeState) -> Vec<u32> {
        if state.finished {
            return Vec::new();
        }
        let node = &self.nodes[state.node];
        let mut out: Vec<u32> = node
            .children
            .iter()
            .filter(|(_, &c)| self.has_live_label(c, &state.removed))
            .map(|(&t, _)| t)
            .collect();
        if let Some(l) = node.terminal.filter(|l| !state.removed.contains(l)) {
            let others_remain = (0..self.num_labels()).any(|o| o != l && !state.removed.contains(&o));
            out.push(EOS);
            if others_remain {
                out.push(SEP);
            }
            out.sort_unstable();
        }
        out
    }

    pub fn advance(&self, state: &mut DecodeState, token: u32) -> Result<()> {
        if !self.allowed_tokens(state).contains(&token) {
            return Err(Error::DisallowedToken { token });
        }
        match token {
            SEP | EOS => {
                let l = self.nodes[state.node].terminal.expect("allowed only at a terminal");
                state.emitted.push(l);
                state.removed.insert(l);
                if token == SEP {
                    state.node = ROOT;
                } else {
                    state.finished = true;
                }
            }
            t => state.node = self.nodes[state.node].children[&t],
        }
        Ok(())
    }

    /// Upper bound on the number of steps any legal decode can take.
    pub fn max_steps(&self) -> usize {
        self.label_tokens.iter().map(Vec::len).sum::<usize>() + 2 * self.num_labels()
    }

    /// Longest token sequence a decode emitting at most `max_labels` labels
    /// can produce, terminators included.
    pub fn max_tokens(&self, max_labels: usize) -> usize {
        let mut lens: Vec<usize> = self.label_tokens.iter().map(Vec::len).collect();
        lens.sort_unstable_by(|a, b| b.cmp(a));
        lens.iter().take(max_labels).map(|l| l + 1).sum()
    }
}

/// Supplies next-token logits given the tokens generated so far.
pub trait LogitsProvider {
    fn next_logits(&mut self, generated: &[u32]) -> Result<Vec<f64>>;
}

impl<F> LogitsProvider for F
where
    F: FnMut(&[u32]) -> Result<Vec<f64>>,
{
    fn next_logits(&mut self, generated: &[u32]) -> Result<Vec<f64>> {
        self(generated)
    }
}

/// Highest-scoring candidate; ties go to the lowest token id.
pub fn masked_argmax(logits: &[f64], candidates: &[u32]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for &t in candidates {
        let v = logits.get(t as usize).copied().unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(bt, b)| v > b || (v == b && t < bt)) {
            best = Some((t, v));
        }
    }
    best.map(|(t, _)| t)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstrainedOutput {
    pub labels: Vec<usize>,
    pub tokens: Vec<u32>,
    /// Model evaluations performed; forced single-choice steps are skipped.
    pub model_calls: usize,
}

/// Greedy decode restricted to trie paths, stopping at EOS or after
/// `max_labels` labels.
pub fn constrained_decode(
    provider: &mut dyn LogitsProvider,
    trie: &LabelTrie,
    max_labels: usize,
) -> Result<ConstrainedOutput> {
    if max_labels == 0 {
        return Err(Error::Config("max_labels must be at least 1".into()));
    }
    let mut state = DecodeState::new();
    let mut tokens = Vec::new();
    let mut model_calls = 0;
    for _ in 0..trie.max_steps() {
        let mut allowed = trie.allowed_tokens(&state);
        if state.emitted.len() + 1 >= max_labels {
            allowed.retain(|&t| t != SEP);
        }
        let tok = if allowed.len() == 1 {
            allowed[0]
        } else {
            model_calls += 1;
            let logits = provider.next_logits(&tokens)?;
            masked_argmax(&logits, &allowed).expect("trie always offers a continuation")
        };
        trie.advance(&mut state, tok)?;
        tokens.push(tok);
        if state.finished {
            return Ok(ConstrainedOutput {
                labels: state.emitted,
                tokens,
                model_calls,
            });
        }
    }
    unreachable!("legal trie walks end within max_steps")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trie(labels: &[&str]) -> LabelTrie {
        LabelTrie::from_labels(labels).unwrap()
    }

    #[test]
    fn single_label_leaf() {
        let t = trie(&["a"]);
        let mut s = DecodeState::new();
        assert_eq!(t.allowed_tokens(&s), vec![u32::from(b'a')]);
        t.advance(&mut s, u32::from(b'a')).unwrap();
        assert_eq!(t.allowed_tokens(&s), vec![EOS]);
    }

    #[test]
    fn two_labels_sep_and_eos_at_leaf() {
        let t = trie(&["a", "b"]);
        let mut s = DecodeState::new();
        assert_eq!(t.allowed_tokens(&s), vec![97, 98]);
        t.advance(&mut s, 97).unwrap();
        assert_eq!(t.allowed_tokens(&s), vec![EOS, SEP]);
        t.advance(&mut s, SEP).unwrap();
        assert_eq!(s.emitted, vec![0]);
        assert_eq!(s.node, ROOT);
        assert_eq!(t.allowed_tokens(&s), vec![98]);
    }

    #[test]
    fn overlay_hides_removed_branch() {
        let t = trie(&["ab", "ac"]);
        let mut s = DecodeState::new();
        s.removed.insert(0);
        t.advance(&mut s, 97).unwrap();
        assert_eq!(t.allowed_tokens(&s), vec![99]);
    }

    #[test]
    fn prefix_label_continues() {
        let t = trie(&["Health", "Healthcare IT", "Health Insurance"]);
        let mut s = DecodeState::new();
        for b in b"Health" {
            t.advance(&mut s, u32::from(*b)).unwrap();
        }
        assert_eq!(t.allowed_tokens(&s), vec![u32::from(b' '), u32::from(b'c'), EOS, SEP]);
    }

    #[test]
    fn eos_finishes() {
        let t = trie(&["a"]);
        let mut s = DecodeState::new();
        t.advance(&mut s, 97).unwrap();
        t.advance(&mut s, EOS).unwrap();
        assert!(s.finished);
        assert!(t.allowed_tokens(&s).is_empty());
        assert!(matches!(t.advance(&mut s, 97), Err(Error::DisallowedToken { .. })));
    }

    #[test]
    fn duplicate_rejected() {
        assert!(matches!(LabelTrie::from_labels(&["x", "x"]), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn adversarial_logits_skip_emitted() {
        let t = trie(&["a", "b"]);
        // Always prefers 'a', then SEP over EOS.
        let mut provider = |_: &[u32]| -> Result<Vec<f64>> {
            let mut v = vec![0.0; 260];
            v[97] = 10.0;
            v[98] = 1.0;
            v[SEP as usize] = 5.0;
            Ok(v)
        };
        let out = constrained_decode(&mut provider, &t, 4).unwrap();
        assert_eq!(out.labels, vec![0, 1]);
    }

    #[test]
    fn cap_forces_stop() {
        let labels: Vec<String> = (0..6).map(|i| format!("L{i}")).collect();
        let t = LabelTrie::from_labels(&labels).unwrap();
        let mut provider = |_: &[u32]| -> Result<Vec<f64>> {
            let mut v = vec![0.0; 260];
            v[EOS as usize] = -1e9;
            Ok(v)
        };
        let out = constrained_decode(&mut provider, &t, 4).unwrap();
        assert_eq!(out.labels.len(), 4);
    }

    #[test]
    fn ties_prefer_lowest_id() {
        assert_eq!(masked_argmax(&[1.0, 3.0, 3.0], &[2, 1]), Some(1));
        assert_eq!(masked_argmax(&[1.0, 3.0, 3.0], &[1, 2]), Some(1));
    }
}
