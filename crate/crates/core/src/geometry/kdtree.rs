//! Static 3-d tree with exact k-nearest queries.
//!
//! Candidates are ordered by `(squared distance, index)`, so results are
//! identical to a full sort with index tie-breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Candidate {
    pub dist2: f64,
    pub index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    /// Tree over `points[i]` for every `i` in `subset`.
    pub fn new(points: &'a [Vec3], subset: Vec<usize>) -> Self {
        let mut tree = Self {
            points,
            order: subset,
            nodes: Vec::new(),
        };
        if !tree.order.is_empty() {
            let n = tree.order.len();
            tree.build(0, n);
        }
        tree
    }

    pub fn over_all(points: &'a [Vec3]) -> Self {
        Self::new(points, (0..points.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Up to `k` nearest accepted points within `max_dist2` (inclusive),
    /// ascending by distance then index.
    pub(crate) fn knn_filtered(
        &self,
        query: &Vec3,
        k: usize,
        max_dist2: f64,
        accept: impl Fn(usize) -> bool,
    ) -> Vec<Candidate> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, max_dist2, &accept, &mut heap);
        }
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<usize> {
        self.knn_filtered(query, k, f64::INFINITY, |_| true)
            .into_iter()
            .map(|c| c.index)
            .collect()
    }

    fn search(
        &self,
        node: usize,
        query: &Vec3,
        k: usize,
        max_dist2: f64,
        accept: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let dist2 = (self.points[i] - query).norm_squared();
                    if dist2 > max_dist2 || !accept(i) {
                        continue;
                    }
                    let c = Candidate { dist2, index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, max_dist2, accept, heap);
                let plane2 = delta * delta;
                let bound = if heap.len() < k {
                    max_dist2
                } else {
                    heap.peek().expect("heap is full").dist2.min(max_dist2)
                };
                if plane2 <= bound {
                    self.search(far, query, k, max_dist2, accept, heap);
                }
            }
        }
    }
}
