//! Dependency trees, entity heads and the subtree spanning two heads.

use std::collections::HashSet;
use std::ops::Range;

use thiserror::Error;

use crate::conll::ParsedSentence;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree has no root")]
    NoRoot,
    #[error("tree has multiple roots: {0:?}")]
    MultipleRoots(Vec<usize>),
    #[error("node {node} has head {head} outside the tree")]
    HeadOutOfRange { node: usize, head: usize },
    #[error("head pointers contain a cycle")]
    Cycle,
    #[error("empty tree")]
    Empty,
    #[error("entity span {start}..{end} is empty or outside the sentence of {len} tokens")]
    BadSpan { start: usize, end: usize, len: usize },
    #[error("node {0} is outside the tree")]
    NoSuchNode(usize),
    #[error("node {0} is not in the subtree")]
    NotInSubtree(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepNode {
    pub form: String,
    pub pos: String,
    /// Label of the edge towards the parent (the root keeps its own label).
    pub deprel: String,
    pub parent: Option<usize>,
    /// Sorted by token index.
    pub children: Vec<usize>,
    /// Character span in the source text.
    pub span: (usize, usize),
}

/// A rooted dependency tree over the tokens of one sentence (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    nodes: Vec<DepNode>,
    root: usize,
    depth: Vec<usize>,
}

impl DepTree {
    /// Build from a parse record (1-based heads, 0 = root).
    pub fn build(sentence: &ParsedSentence) -> Result<DepTree, TreeError> {
        let heads = sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match t.head {
                0 => Ok(None),
                h if h <= sentence.tokens.len() => Ok(Some(h - 1)),
                h => Err(TreeError::HeadOutOfRange { node: i, head: h }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let nodes = sentence
            .tokens
            .iter()
            .zip(heads)
            .map(|(t, parent)| DepNode {
                form: t.form.clone(),
                pos: t.pos.clone(),
                deprel: t.deprel.clone(),
                parent,
                children: Vec::new(),
                span: (t.start, t.end),
            })
            .collect();
        DepTree::from_nodes(nodes)
    }

    /// Link `parent` pointers into a tree; any `children` already present
    /// are discarded and recomputed.
    pub fn from_nodes(mut nodes: Vec<DepNode>) -> Result<DepTree, TreeError> {
        let n = nodes.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        let mut roots = Vec::new();
        for node in nodes.iter_mut() {
            node.children.clear();
        }
        for i in 0..n {
            match nodes[i].parent {
                None => roots.push(i),
                Some(p) if p < n && p != i => nodes[p].children.push(i),
                Some(p) if p == i => return Err(TreeError::Cycle),
                Some(p) => return Err(TreeError::HeadOutOfRange { node: i, head: p }),
            }
        }
        let root = match roots.as_slice() {
            [] => return Err(TreeError::NoRoot),
            [r] => *r,
            _ => return Err(TreeError::MultipleRoots(roots)),
        };
        // Children were pushed in increasing index order already.
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut stack = vec![root];
        let mut seen = 1;
        while let Some(v) = stack.pop() {
            for &c in &nodes[v].children {
                depth[c] = depth[v] + 1;
                seen += 1;
                stack.push(c);
            }
        }
        if seen != n {
            return Err(TreeError::Cycle);
        }
        Ok(DepTree { nodes, root, depth })
    }

    /// Join several sentence trees under a synthetic root appended after
    /// all of their nodes. Node `k` of tree `t` keeps its position shifted
    /// by the total length of the preceding trees.
    pub fn join(trees: &[&DepTree]) -> DepTree {
        let mut nodes = Vec::new();
        let mut roots = Vec::new();
        for t in trees {
            let offset = nodes.len();
            roots.push(offset + t.root);
            nodes.extend(t.nodes.iter().map(|n| DepNode {
                parent: n.parent.map(|p| p + offset),
                children: Vec::new(),
                ..n.clone()
            }));
        }
        let synthetic = nodes.len();
        for r in roots {
            nodes[r].parent = Some(synthetic);
        }
        nodes.push(DepNode {
            form: "<ROOT>".into(),
            pos: "ROOT".into(),
            deprel: "ROOT".into(),
            parent: None,
            children: Vec::new(),
            span: (0, 0),
        });
        DepTree::from_nodes(nodes).expect("joining valid trees yields a tree")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, i: usize) -> &DepNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent
    }

    /// The syntactic head of a token span: the span node whose parent lies
    /// outside the span (or which is the root). Several candidates (a
    /// non-projective span) are resolved by smallest depth, then smallest
    /// index.
    pub fn entity_head(&self, span: Range<usize>) -> Result<usize, TreeError> {
        if span.start >= span.end || span.end > self.len() {
            return Err(TreeError::BadSpan {
                start: span.start,
                end: span.end,
                len: self.len(),
            });
        }
        Ok(span
            .clone()
            .filter(|&i| self.parent(i).is_none_or(|p| !span.contains(&p)))
            .min_by_key(|&i| (self.depth[i], i))
            .expect("a non-empty span in a tree has at least one external head"))
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.nodes[a].parent.expect("non-root has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.nodes[b].parent.expect("non-root has a parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root has a parent");
            b = self.nodes[b].parent.expect("non-root has a parent");
        }
        a
    }

    /// The two root-ward paths from `h1` and `h2` up to their lowest common
    /// ancestor, with subtree-local heights.
    pub fn spanning_subtree(&self, h1: usize, h2: usize) -> Result<SpanningSubtree, TreeError> {
        for h in [h1, h2] {
            if h >= self.len() {
                return Err(TreeError::NoSuchNode(h));
            }
        }
        let top = self.lca(h1, h2);
        let mut nodes = Vec::new();
        for h in [h1, h2] {
            let mut cur = h;
            while cur != top {
                nodes.push(cur);
                cur = self.nodes[cur].parent.expect("path to LCA stays below the root");
            }
        }
        nodes.push(top);
        nodes.sort_unstable();
        nodes.dedup();

        let pos = |v: usize| nodes.binary_search(&v).expect("member");
        let mut children = vec![Vec::new(); nodes.len()];
        for &v in &nodes {
            if v != top {
                let p = self.nodes[v].parent.expect("non-top member has a parent");
                children[pos(p)].push(v);
            }
        }
        // Members are sorted, so children lists are too.
        let mut heights = vec![0; nodes.len()];
        let mut order = nodes.clone();
        order.sort_by_key(|&v| std::cmp::Reverse(self.depth[v]));
        for v in order {
            let k = pos(v);
            heights[k] = children[k]
                .iter()
                .map(|&c| heights[pos(c)] + 1)
                .max()
                .unwrap_or(0);
        }
        Ok(SpanningSubtree {
            nodes,
            root: top,
            heights,
            children,
            head1: h1,
            head2: h2,
        })
    }

    /// Bracketed rendering, e.g. `(offer (communication Oral) indices)`.
    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        self.bracket(self.root, &|_| true, &mut out);
        out
    }

    fn bracket(&self, v: usize, keep: &dyn Fn(usize) -> bool, out: &mut String) {
        let kids: Vec<usize> = self.nodes[v]
            .children
            .iter()
            .copied()
            .filter(|&c| keep(c))
            .collect();
        if kids.is_empty() {
            out.push_str(&self.nodes[v].form);
            return;
        }
        out.push('(');
        out.push_str(&self.nodes[v].form);
        for c in kids {
            out.push(' ');
            self.bracket(c, keep, out);
        }
        out.push(')');
    }
}

/// Subtree spanning two entity heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningSubtree {
    /// Member node indices, sorted.
    nodes: Vec<usize>,
    root: usize,
    /// Aligned with `nodes`.
    heights: Vec<usize>,
    /// Aligned with `nodes`; children inside the subtree, sorted.
    children: Vec<Vec<usize>>,
    pub head1: usize,
    pub head2: usize,
}

impl SpanningSubtree {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    /// Height within the subtree; leaves are 0.
    pub fn height(&self, node: usize) -> Result<usize, TreeError> {
        self.nodes
            .binary_search(&node)
            .map(|k| self.heights[k])
            .map_err(|_| TreeError::NotInSubtree(node))
    }

    pub fn children(&self, node: usize) -> Result<&[usize], TreeError> {
        self.nodes
            .binary_search(&node)
            .map(|k| self.children[k].as_slice())
            .map_err(|_| TreeError::NotInSubtree(node))
    }

    /// Members in post-order (children before parents, children in index order).
    pub fn post_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                out.push(v);
                continue;
            }
            stack.push((v, true));
            let k = self.nodes.binary_search(&v).expect("member");
            for &c in self.children[k].iter().rev() {
                stack.push((c, false));
            }
        }
        out
    }

    pub fn to_bracketed(&self, tree: &DepTree) -> String {
        let members: HashSet<usize> = self.nodes.iter().copied().collect();
        let mut out = String::new();
        tree.bracket(self.root, &|c| members.contains(&c), &mut out);
        out
    }
}
