use crate::{Error, Result, Vec3};

/// Point positions, velocity history and object ids at one timestep.
///
/// `velocities` is stored flat with `history` entries per point, newest
/// first: `velocities[i * history]` is `v_i(t)`, the next one `v_i(t-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudFrame {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub object_ids: Vec<u32>,
    pub history: usize,
    pub frame_index: usize,
}

impl PointCloudFrame {
    pub fn new(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        object_ids: Vec<u32>,
        history: usize,
        frame_index: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if object_ids.len() != n {
            return Err(Error::invalid(format!(
                "{} positions but {} object ids",
                n,
                object_ids.len()
            )));
        }
        if velocities.len() != n * history {
            return Err(Error::invalid(format!(
                "expected {} velocity entries for history {}, got {}",
                n * history,
                history,
                velocities.len()
            )));
        }
        if positions.iter().chain(&velocities).any(|p| !is_finite(p)) {
            return Err(Error::invalid("non-finite coordinate in frame"));
        }
        Ok(Self {
            positions,
            velocities,
            object_ids,
            history,
            frame_index,
        })
    }

    /// Frame with no velocity history, for pure geometric queries.
    pub fn from_positions(positions: Vec<Vec3>, object_ids: Vec<u32>) -> Result<Self> {
        Self::new(positions, Vec::new(), object_ids, 0, 0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.iter().map(|&o| o as usize + 1).max().unwrap_or(0)
    }

    /// `v_i(t - lag)` for `lag < history`.
    pub fn velocity(&self, i: usize, lag: usize) -> Vec3 {
        self.velocities[i * self.history + lag]
    }
}

pub(crate) fn is_finite(p: &Vec3) -> bool {
    p.iter().all(|c| c.is_finite())
}

/// Triangle mesh whose vertices carry object ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub object_ids: Vec<u32>,
}

impl TriMesh {
    /// Validates index ranges, per-triangle object consistency and that no
    /// triangle is degenerate.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, object_ids: Vec<u32>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            object_ids,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_ids.len() != self.vertices.len() {
            return Err(Error::invalid("mesh object ids do not match vertex count"));
        }
        let n = self.vertices.len();
        for (f, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::invalid(format!("triangle {f} index out of range")));
            }
            let o = self.object_ids[tri[0]];
            if self.object_ids[tri[1]] != o || self.object_ids[tri[2]] != o {
                return Err(Error::invalid(format!("triangle {f} spans several objects")));
            }
            if self.face_area(f) <= 0.0 {
                return Err(Error::ZeroAreaFace(f));
            }
        }
        Ok(())
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_vertices(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_object(&self, f: usize) -> u32 {
        self.object_ids[self.triangles[f][0]]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|f| self.face_area(f)).sum()
    }

    /// Same topology, new vertex positions (e.g. the next frame).
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::invalid("vertex count changed"));
        }
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            object_ids: self.object_ids.clone(),
        })
    }

    /// Concatenates meshes, offsetting indices.
    pub fn merge(meshes: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            object_ids: Vec::new(),
        };
        for m in meshes {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.object_ids.extend_from_slice(&m.object_ids);
            out.triangles
                .extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        out
    }
}

/// Variable-size neighbor lists in CSR layout.
///
/// The neighbors of query `q` are `indices[offsets[q]..offsets[q + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Neighborhood {
    pub indices: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Neighborhood {
    pub fn empty(query_count: usize) -> Self {
        Self {
            indices: Vec::new(),
            offsets: vec![0; query_count + 1],
        }
    }

    pub fn from_lists<I, L>(lists: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let mut nb = Self {
            indices: Vec::new(),
            offsets: vec![0],
        };
        for list in lists {
            nb.indices.extend(list);
            nb.offsets.push(nb.indices.len());
        }
        nb
    }

    /// One neighbor per query.
    pub fn single(indices: Vec<usize>) -> Self {
        let offsets = (0..=indices.len()).collect();
        Self { indices, offsets }
    }

    pub fn query_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.indices[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn count(&self, q: usize) -> usize {
        self.offsets[q + 1] - self.offsets[q]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.query_count()).map(move |q| self.neighbors(q))
    }

    /// Checks monotone offsets, index bounds and the optional size cap.
    pub fn validate(&self, source_count: usize, max_per_query: Option<usize>) -> Result<()> {
        if self.offsets.first() != Some(&0) || self.offsets.last() != Some(&self.indices.len()) {
            return Err(Error::invalid("neighborhood offsets do not span the index list"));
        }
        if self.offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("neighborhood offsets decrease"));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= source_count) {
            return Err(Error::invalid(format!(
                "neighbor index {bad} out of range for {source_count} sources"
            )));
        }
        if let Some(k) = max_per_query {
            if (0..self.query_count()).any(|q| self.count(q) > k) {
                return Err(Error::invalid(format!("more than {k} neighbors for a query")));
            }
        }
        Ok(())
    }
}

/// Voxel sizes and relational radii for each resolution level.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoxelSchedule {
    /// Voxel of the initial surface subsampling.
    pub base_voxel: f64,
    /// One voxel per downsampling level, strictly increasing.
    pub level_voxels: Vec<f64>,
    /// Relational radius per resolution level, level 0 first
    /// (`level_voxels.len() + 1` entries).
    pub level_radii: Vec<f64>,
}

impl VoxelSchedule {
    /// Physion-scale ladder: base 0.05, levels 0.075/0.1125/0.16875 and
    /// radii 0.1/0.15/0.225/0.3375, multiplied by `unit`.
    pub fn physion(unit: f64) -> Self {
        Self {
            base_voxel: 0.05 * unit,
            level_voxels: [0.075, 0.1125, 0.16875].iter().map(|v| v * unit).collect(),
            level_radii: [0.1, 0.15, 0.225, 0.3375].iter().map(|r| r * unit).collect(),
        }
    }

    /// First `levels` downsampling levels of `self`.
    pub fn truncated(&self, levels: usize) -> Self {
        Self {
            base_voxel: self.base_voxel,
            level_voxels: self.level_voxels[..levels].to_vec(),
            level_radii: self.level_radii[..levels + 1].to_vec(),
        }
    }

    pub fn levels(&self) -> usize {
        self.level_voxels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_voxel <= 0.0 {
            return Err(Error::invalid("base voxel must be positive"));
        }
        if self.level_voxels.windows(2).any(|w| w[1] <= w[0])
            || self.level_voxels.first().is_some_and(|&v| v <= 0.0)
        {
            return Err(Error::invalid("level voxels must be positive and strictly increasing"));
        }
        if self.level_radii.len() != self.level_voxels.len() + 1 {
            return Err(Error::invalid(format!(
                "{} level voxels need {} radii, got {}",
                self.level_voxels.len(),
                self.level_voxels.len() + 1,
                self.level_radii.len()
            )));
        }
        if self.level_radii.iter().any(|&r| r <= 0.0) {
            return Err(Error::invalid("radii must be positive"));
        }
        Ok(())
    }
}
