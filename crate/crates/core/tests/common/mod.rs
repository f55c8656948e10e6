//! Synthetic embedding sets with known ground truth, shared by the
//! integration and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vec2gc::{EmbeddingSet, Labels};

pub struct Planted {
    pub emb: EmbeddingSet,
    pub labels: Labels,
    /// Ground-truth groups as corpus indices.
    pub groups: Vec<Vec<usize>>,
}

impl Planted {
    fn assemble(vectors: Vec<Vec<f64>>, groups: Vec<Vec<usize>>, names: &[String]) -> Self {
        let mut label_of = vec![String::new(); vectors.len()];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                label_of[i] = names[g].clone();
            }
        }
        let ids: Vec<String> = (0..vectors.len()).map(|i| format!("item{i:05}")).collect();
        let labels = ids
            .iter()
            .zip(&label_of)
            .filter(|(_, l)| !l.is_empty())
            .map(|(id, l)| (id.clone(), l.clone()))
            .collect();
        let vectors = vectors
            .into_iter()
            .map(|v| v.into_iter().map(|x| x as f32).collect())
            .collect();
        Self {
            emb: EmbeddingSet::new(ids, vectors).expect("valid synthetic set"),
            labels,
            groups,
        }
    }

    pub fn jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.emb.write_jsonl(&mut out).unwrap();
        out
    }

    pub fn labels_tsv(&self) -> String {
        self.labels
            .iter()
            .map(|(id, l)| format!("{id}\t{l}\n"))
            .collect()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Unit vector of norm `len` with random direction in `dims`.
fn random_offset(
    rng: &mut ChaCha8Rng,
    dim: usize,
    dims: std::ops::Range<usize>,
    len: f64,
) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for d in dims {
        v[d] = rng.random_range(-1.0..1.0);
    }
    normalize(&mut v);
    v.iter_mut().for_each(|x| *x *= len);
    v
}

/// `groups` tight clusters of `per_group` points around orthogonal axes.
/// Noise of norm at most 0.2 lives in dimensions no axis uses, which keeps
/// every intra-group cosine above 0.92 and every inter-group cosine below
/// 0.05.
pub fn planted_groups(groups: usize, per_group: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = groups + 24;
    let mut vectors = Vec::new();
    let mut members = Vec::new();
    for g in 0..groups {
        let mut group = Vec::new();
        for _ in 0..per_group {
            let len = rng.random_range(0.05..0.2);
            let mut v = random_offset(&mut rng, dim, groups..dim, len);
            v[g] = 1.0;
            group.push(vectors.len());
            vectors.push(v);
        }
        members.push(group);
    }
    let names: Vec<String> = (0..groups).map(|g| format!("group{g}")).collect();
    Planted::assemble(vectors, members, &names)
}

/// Two super-groups, each made of three sub-groups of `per_sub` points.
/// Sub-groups of one super-group are joined by edges about half as heavy as
/// their internal ones; super-groups are mutually orthogonal.
pub fn nested_groups(per_sub: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_dims = 40;
    let dim = 2 + 6 + noise_dims;
    let spread = 0.049f64.sqrt();
    let mut vectors = Vec::new();
    let mut members = Vec::new();
    for s in 0..2 {
        for j in 0..3 {
            let mut center = vec![0.0; dim];
            center[s] = 1.0;
            center[2 + 3 * s + j] = spread;
            normalize(&mut center);
            let mut group = Vec::new();
            for _ in 0..per_sub {
                let noise = random_offset(&mut rng, dim, 8..dim, 0.2);
                let v: Vec<f64> = center.iter().zip(&noise).map(|(c, n)| c + n).collect();
                group.push(vectors.len());
                vectors.push(v);
            }
            members.push(group);
        }
    }
    let names: Vec<String> = (0..6)
        .map(|g| format!("super{}_sub{}", g / 3, g % 3))
        .collect();
    Planted::assemble(vectors, members, &names)
}

/// Two long arcs on the unit sphere: one along the equator with 2 degree
/// spacing, a denser one along the 20 degree parallel with 1 degree
/// spacing. Both span 180 degrees of longitude, so a medoid split by
/// longitude is cheaper than one along the arcs, while a similarity
/// threshold of 0.99 never links the two arcs.
pub fn elongated_arcs() -> Planted {
    let mut vectors = Vec::new();
    let mut members = vec![Vec::new(), Vec::new()];
    let arcs = [(0.0f64, 2.0f64), (20.0, 1.0)];
    for (a, &(lat, step)) in arcs.iter().enumerate() {
        let lat = lat.to_radians();
        let count = (180.0 / step) as usize + 1;
        for i in 0..count {
            let lon = (i as f64 * step).to_radians();
            members[a].push(vectors.len());
            vectors.push(vec![
                lat.cos() * lon.cos(),
                lat.cos() * lon.sin(),
                lat.sin(),
            ]);
        }
    }
    Planted::assemble(
        vectors,
        members,
        &["equator".to_owned(), "parallel".to_owned()],
    )
}

/// Random embedding set: `clusters` noisy groups in `dim` dimensions plus
/// `isolated` vectors on private axes (cosine 0 with everything else).
pub fn random_with_isolated(
    n: usize,
    dim: usize,
    clusters: usize,
    isolated: usize,
    seed: u64,
) -> (EmbeddingSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_dim = dim + isolated;
    let centers: Vec<Vec<f64>> = (0..clusters.max(1))
        .map(|_| random_offset(&mut rng, total_dim, 0..dim, 1.0))
        .collect();
    let mut vectors: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            let len = rng.random_range(0.0..0.8);
            let noise = random_offset(&mut rng, total_dim, 0..dim, len);
            c.iter().zip(&noise).map(|(a, b)| a + b).collect()
        })
        .collect();
    let mut isolated_idx = Vec::new();
    for j in 0..isolated {
        let mut v = vec![0.0; total_dim];
        v[dim + j] = 1.0;
        let at = rng.random_range(0..=vectors.len());
        vectors.insert(at, v);
        isolated_idx.iter_mut().for_each(|i: &mut usize| {
            if *i >= at {
                *i += 1
            }
        });
        isolated_idx.push(at);
    }
    isolated_idx.sort_unstable();
    let ids = (0..vectors.len()).map(|i| format!("r{i}")).collect();
    let vectors = vectors
        .into_iter()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
        .collect();
    (EmbeddingSet::new(ids, vectors).unwrap(), isolated_idx)
}

/// Brute-force cosine similarity in f64, independent of the library.
pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// (min intra-group, max inter-group) cosine over all pairs.
pub fn group_cosine_bounds(p: &Planted) -> (f64, f64) {
    let mut group_of = vec![usize::MAX; p.emb.len()];
    for (g, m) in p.groups.iter().enumerate() {
        for &i in m {
            group_of[i] = g;
        }
    }
    let (mut intra, mut inter) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in 0..p.emb.len() {
        for b in a + 1..p.emb.len() {
            let cs = naive_cosine(p.emb.vector(a), p.emb.vector(b));
            if group_of[a] == group_of[b] {
                intra = intra.min(cs);
            } else {
                inter = inter.max(cs);
            }
        }
    }
    (intra, inter)
}

pub fn sorted(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    groups.iter_mut().for_each(|g| g.sort_unstable());
    groups.sort();
    groups
}

/// Appends `j` vectors on fresh private axes, orthogonal to everything
/// else. Returns the padded set and the indices of the new vectors.
pub fn append_isolated(emb: &EmbeddingSet, j: usize) -> (EmbeddingSet, Vec<usize>) {
    let dim = emb.dim() + j;
    let mut ids: Vec<String> = emb.ids().to_vec();
    let mut vectors: Vec<Vec<f32>> = emb
        .vectors()
        .map(|v| {
            let mut v = v.to_vec();
            v.resize(dim, 0.0);
            v
        })
        .collect();
    for k in 0..j {
        let mut v = vec![0.0; dim];
        v[emb.dim() + k] = 1.0;
        ids.push(format!("lone{k}"));
        vectors.push(v);
    }
    let added = (emb.len()..emb.len() + j).collect();
    let mut out = EmbeddingSet::new(ids, vectors).unwrap();
    if let Some(labels) = emb.labels() {
        out.attach_labels(labels.clone());
    }
    (out, added)
}
