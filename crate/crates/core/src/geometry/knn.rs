//! Object-aware neighbor search.

use std::collections::BTreeMap;

use super::kdtree::KdTree;
use super::types::Neighborhood;
use crate::{Error, Result, Vec3};

/// Per-object search structure over a fixed source set.
pub struct ObjectIndex<'a> {
    positions: &'a [Vec3],
    object_ids: &'a [u32],
    per_object: BTreeMap<u32, KdTree<'a>>,
    all: KdTree<'a>,
}

impl<'a> ObjectIndex<'a> {
    pub fn new(positions: &'a [Vec3], object_ids: &'a [u32]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptySource);
        }
        if positions.len() != object_ids.len() {
            return Err(Error::invalid("positions and object ids differ in length"));
        }
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &o) in object_ids.iter().enumerate() {
            members.entry(o).or_default().push(i);
        }
        let per_object = members
            .into_iter()
            .map(|(o, idx)| (o, KdTree::new(positions, idx)))
            .collect();
        Ok(Self {
            positions,
            object_ids,
            per_object,
            all: KdTree::over_all(positions),
        })
    }

    /// `k` nearest sources sharing the query's object id, self included.
    pub fn same_object(&self, query: &Vec3, object: u32, k: usize) -> Vec<usize> {
        self.per_object
            .get(&object)
            .map(|t| t.knn(query, k))
            .unwrap_or_default()
    }

    /// `k` nearest sources of other objects, then dropped beyond `radius`.
    pub fn cross_object(&self, query: &Vec3, object: u32, k: usize, radius: f64) -> Vec<usize> {
        let ids = self.object_ids;
        self.all
            .knn_filtered(query, k, radius * radius, |i| ids[i] != object)
            .into_iter()
            .map(|c| c.index)
            .collect()
    }

    pub fn positions(&self) -> &[Vec3] {
        self.positions
    }
}

fn check_queries(queries: &[Vec3], query_object_ids: &[u32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if queries.len() != query_object_ids.len() {
        return Err(Error::invalid("queries and query object ids differ in length"));
    }
    Ok(())
}

/// For each query, up to `k` nearest sources with the same object id,
/// ascending by distance with ties broken by lower index.
pub fn knn_same_object(
    positions: &[Vec3],
    object_ids: &[u32],
    queries: &[Vec3],
    query_object_ids: &[u32],
    k: usize,
) -> Result<Neighborhood> {
    check_queries(queries, query_object_ids, k)?;
    let index = ObjectIndex::new(positions, object_ids)?;
    Ok(Neighborhood::from_lists(
        queries
            .iter()
            .zip(query_object_ids)
            .map(|(q, &o)| index.same_object(q, o, k)),
    ))
}

/// For each query, the `k` nearest sources of other objects, keeping only
/// those within `radius` (inclusive).
pub fn knn_cross_object(
    positions: &[Vec3],
    object_ids: &[u32],
    queries: &[Vec3],
    query_object_ids: &[u32],
    k: usize,
    radius: f64,
) -> Result<Neighborhood> {
    check_queries(queries, query_object_ids, k)?;
    if radius <= 0.0 {
        return Err(Error::invalid("radius must be positive"));
    }
    let index = ObjectIndex::new(positions, object_ids)?;
    Ok(Neighborhood::from_lists(
        queries
            .iter()
            .zip(query_object_ids)
            .map(|(q, &o)| index.cross_object(q, o, k, radius)),
    ))
}

/// Nearest same-object source for each query; queries whose object has no
/// sources fall back to the nearest source overall.
pub fn nearest_same_object(
    positions: &[Vec3],
    object_ids: &[u32],
    queries: &[Vec3],
    query_object_ids: &[u32],
) -> Result<Vec<usize>> {
    check_queries(queries, query_object_ids, 1)?;
    let index = ObjectIndex::new(positions, object_ids)?;
    Ok(queries
        .iter()
        .zip(query_object_ids)
        .map(|(q, &o)| {
            index
                .same_object(q, o, 1)
                .first()
                .copied()
                .unwrap_or_else(|| index.all.knn(q, 1)[0])
        })
        .collect())
}
