//! Tree transforms used to read grammars off a treebank.
//!
//! The 6-gram transform right-binarizes every node with more than two
//! children into a chain of primed symbols whose subscripts carry up to five
//! of the remaining child labels, then removes unary chains so that no span
//! carries more than one unary rule. The terminal-prime transform keeps that
//! shape and relabels every internal node by the first terminal of its span.

use super::symbol::{Symbol, MAX_SUBSCRIPT};
use super::tree::Tree;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    SixGram,
    TerminalPrime,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6gram" | "6-gram" | "sixgram" => Ok(Transform::SixGram),
            "terminal-prime" | "tprime" => Ok(Transform::TerminalPrime),
            other => Err(Error::Invalid(format!("unknown transform `{other}`"))),
        }
    }
}

/// Full pipeline from a treebank tree to a grammar-ready tree.
pub fn apply(tree: &Tree, transform: Transform) -> Result<Tree> {
    let six = normalize_unaries(&binarize(tree, MAX_SUBSCRIPT));
    match transform {
        Transform::SixGram => Ok(six),
        Transform::TerminalPrime => to_terminal_prime(&six),
    }
}

/// Right-binarize with primed chain symbols carrying up to `max_subscript` labels.
pub fn binarize(tree: &Tree, max_subscript: usize) -> Tree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let labels: Vec<String> = tree.children.iter().map(|c| c.label.to_string()).collect();
    let mut children: Vec<Tree> = tree
        .children
        .iter()
        .map(|c| binarize(c, max_subscript))
        .collect();
    let k = children.len();
    if k <= 2 {
        return Tree::node(tree.label.clone(), children);
    }
    let window = max_subscript.max(2);
    // Build the chain from the right end: X'{C_{k-2},C_{k-1}} -> C_{k-2} C_{k-1}.
    let last = children.pop().unwrap();
    let second_last = children.pop().unwrap();
    let mut chain = Tree::node(
        Symbol::chain(tree.label.base.clone(), labels[k - 2..].to_vec()),
        vec![second_last, last],
    );
    for i in (1..k - 2).rev() {
        let child = children.pop().unwrap();
        let end = (i + window).min(k);
        chain = Tree::node(
            Symbol::chain(tree.label.base.clone(), labels[i..end].to_vec()),
            vec![child, chain],
        );
    }
    let first = children.pop().unwrap();
    Tree::node(tree.label.clone(), vec![first, chain])
}

/// Inverse of [`binarize`]: splice primed chain nodes into their parents.
pub fn debinarize(tree: &Tree) -> Tree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let mut children = Vec::with_capacity(tree.children.len());
    for c in &tree.children {
        let d = debinarize(c);
        if d.label.primed && !d.is_leaf() {
            children.extend(d.children);
        } else {
            children.push(d);
        }
    }
    Tree {
        label: tree.label.clone(),
        children,
        token: tree.token.clone(),
    }
}

/// Collapse unary chains into `A+B` symbols and mark every nonterminal child
/// of a unary node as post-unary, so a derivation never applies two unary
/// rules over the same span.
pub fn normalize_unaries(tree: &Tree) -> Tree {
    if tree.is_leaf() {
        return tree.clone();
    }
    if tree.children.len() == 1 {
        let child = &tree.children[0];
        if !child.is_leaf() && child.children.len() == 1 {
            let mut label = tree.label.clone();
            label.base = format!("{}+{}", tree.label.base, child.label.base);
            return normalize_unaries(&Tree::node(label, child.children.clone()));
        }
    }
    let mut children: Vec<Tree> = tree.children.iter().map(normalize_unaries).collect();
    if children.len() == 1 && !children[0].is_leaf() {
        children[0].label.post_unary = true;
    }
    Tree::node(tree.label.clone(), children)
}

/// Inverse of [`normalize_unaries`].
pub fn denormalize_unaries(tree: &Tree) -> Tree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let children: Vec<Tree> = tree.children.iter().map(denormalize_unaries).collect();
    let mut label = tree.label.clone();
    label.post_unary = false;
    if !label.base.contains('+') {
        return Tree::node(label, children);
    }
    let parts: Vec<&str> = label.base.split('+').collect();
    let mut node = Tree::node(Symbol::nonterminal(*parts.last().unwrap()), children);
    for (i, part) in parts.iter().enumerate().rev().skip(1) {
        let mut l = if i == 0 {
            label.clone()
        } else {
            Symbol::nonterminal(*part)
        };
        l.base = part.to_string();
        node = Tree::node(l, vec![node]);
    }
    node
}

/// Undo the 6-gram transform, recovering the original treebank shape.
pub fn restore(tree: &Tree) -> Tree {
    debinarize(&denormalize_unaries(tree))
}

/// Relabel each internal node of a binarized tree with the uppercase form of
/// the first terminal in its span, keeping the prime and post-unary markers.
pub fn to_terminal_prime(tree: &Tree) -> Result<Tree> {
    if tree.is_leaf() {
        return Ok(tree.clone());
    }
    if tree.children.len() > 2 {
        return Err(Error::Invalid(format!(
            "terminal-prime transform needs a binarized tree; `{}` has {} children",
            tree.label,
            tree.children.len()
        )));
    }
    let children = tree
        .children
        .iter()
        .map(to_terminal_prime)
        .collect::<Result<Vec<_>>>()?;
    let first = first_terminal(tree);
    let upper = first.to_uppercase();
    if upper == first {
        return Err(Error::Invalid(format!(
            "terminal `{first}` has no lowercase form; terminal-prime labels would collide with it"
        )));
    }
    let mut label = Symbol::nonterminal(upper);
    label.primed = tree.label.primed;
    label.post_unary = tree.label.post_unary;
    Ok(Tree::node(label, children))
}

fn first_terminal(tree: &Tree) -> &str {
    let mut t = tree;
    while !t.is_leaf() {
        t = &t.children[0];
    }
    &t.label.base
}
