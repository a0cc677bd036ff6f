//! Inverted-file index over 8-bit scalar-quantized rows. Each row is stored
//! as the code of its residual from the centroid of its list.

use ndarray::{Array2, ArrayView2};

use super::kmeans::{kmeans, KMEANS_ITERS};
use super::vector::{top_k, FlatIndex, Metric, Scored};
use super::IndexError;

/// Fraction of values per dimension allowed to fall outside the code range.
pub const CLIP: f64 = 0.001;

/// Per-dimension affine code: `value ≈ min + code * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub min: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Codebook {
    /// Range per dimension from the `CLIP` and `1 − CLIP` quantiles, so a few
    /// outlying rows do not coarsen the grid for all others. Values outside
    /// the range are clamped.
    pub fn fit(rows: ArrayView2<f32>) -> Self {
        let (n, dim) = rows.dim();
        let mut min = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        let mut col = Vec::with_capacity(n);
        for d in 0..dim {
            col.clear();
            col.extend(rows.column(d).iter().copied());
            col.sort_by(f32::total_cmp);
            let at = |q: f64| col[((n - 1) as f64 * q).round() as usize];
            let (lo, hi) = if n == 0 { (0.0, 0.0) } else { (at(CLIP), at(1.0 - CLIP)) };
            min.push(lo);
            scale.push((hi - lo) / 255.0);
        }
        Codebook { min, scale }
    }

    pub fn quantize(&self, v: &[f32], out: &mut Vec<u8>) {
        for ((&x, &m), &s) in v.iter().zip(&self.min).zip(&self.scale) {
            let c = if s > 0.0 { ((x - m) / s).round().clamp(0.0, 255.0) } else { 0.0 };
            out.push(c as u8);
        }
    }

    pub fn dequantize(&self, codes: &[u8], out: &mut [f32]) {
        for (d, &c) in codes.iter().enumerate() {
            out[d] = self.min[d] + c as f32 * self.scale[d];
        }
    }
}

#[inline]
fn decode(base: f32, code: u8, scale: f32) -> f32 {
    base + code as f32 * scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub(crate) metric: Metric,
    pub(crate) dim: usize,
    pub(crate) centroids: Array2<f32>,
    pub(crate) codebook: Codebook,
    /// Row positions per cluster, ascending.
    pub(crate) lists: Vec<Vec<u32>>,
    /// Residual codes per cluster, in the order of `lists`.
    pub(crate) codes: Vec<Vec<u8>>,
    /// `(list, offset)` of each row position.
    pub(crate) slots: Vec<(u32, u32)>,
    /// Centroid plus codebook minimum, per list: the value of code 0.
    bases: Array2<f32>,
}

impl IvfIndex {
    /// Clusters the rows of `flat` into `⌈√n⌉` lists and quantizes them.
    pub fn build(flat: &FlatIndex, seed: u64) -> Result<Self, IndexError> {
        let n = flat.len();
        if n == 0 {
            return Err(IndexError::Empty);
        }
        let nlist = (n as f64).sqrt().ceil() as usize;
        let x = ArrayView2::from_shape((n, flat.dim()), flat.raw()).expect("flat rows");
        let km = kmeans(x, nlist, KMEANS_ITERS, seed);
        let mut residuals = x.to_owned();
        for (mut r, &c) in residuals.rows_mut().into_iter().zip(&km.assignment) {
            r -= &km.centroids.row(c as usize);
        }
        let codebook = Codebook::fit(residuals.view());
        let mut codes = Vec::with_capacity(n * flat.dim());
        for r in residuals.rows() {
            codebook.quantize(r.as_slice().expect("contiguous"), &mut codes);
        }
        let mut lists = vec![Vec::new(); nlist];
        for (pos, &c) in km.assignment.iter().enumerate() {
            lists[c as usize].push(pos as u32);
        }
        Ok(Self::from_parts(flat.metric(), km.centroids, codebook, lists, &codes).expect("consistent clustering"))
    }

    /// Reassembles an index from lists and position-ordered codes; every
    /// position below `codes.len() / dim` must appear in exactly one list.
    pub(crate) fn from_parts(
        metric: Metric,
        centroids: Array2<f32>,
        codebook: Codebook,
        lists: Vec<Vec<u32>>,
        codes: &[u8],
    ) -> Option<Self> {
        let dim = centroids.ncols();
        if dim == 0 || codes.len() % dim != 0 || lists.len() != centroids.nrows() {
            return None;
        }
        let n = codes.len() / dim;
        let mut slots = vec![(u32::MAX, 0); n];
        let mut grouped = Vec::with_capacity(lists.len());
        for (c, l) in lists.iter().enumerate() {
            let mut g = Vec::with_capacity(l.len() * dim);
            for (i, &p) in l.iter().enumerate() {
                let slot = slots.get_mut(p as usize)?;
                if slot.0 != u32::MAX {
                    return None;
                }
                *slot = (c as u32, i as u32);
                g.extend_from_slice(&codes[p as usize * dim..(p as usize + 1) * dim]);
            }
            grouped.push(g);
        }
        if slots.iter().any(|s| s.0 == u32::MAX) {
            return None;
        }
        let mut bases = centroids.clone();
        for mut row in bases.rows_mut() {
            for (b, &m) in row.iter_mut().zip(&codebook.min) {
                *b += m;
            }
        }
        Some(IvfIndex { metric, dim, centroids, codebook, lists, codes: grouped, slots, bases })
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn default_nprobe(&self) -> usize {
        (self.nlist() as f64).sqrt().ceil() as usize
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroids(&self) -> &Array2<f32> {
        &self.centroids
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn code_bytes(&self) -> usize {
        self.codes.iter().map(Vec::len).sum()
    }

    /// The residual code of one row.
    pub fn code(&self, pos: u32) -> &[u8] {
        let (c, i) = self.slots[pos as usize];
        let at = i as usize * self.dim;
        &self.codes[c as usize][at..at + self.dim]
    }

    /// Appends a row (already prepared, e.g. normalized for cosine) at the
    /// next position. Values outside the codebook range are clamped.
    pub fn push(&mut self, row: &[f32]) -> u32 {
        let pos = self.len() as u32;
        let c = self.nearest_lists(row, 1)[0];
        let residual: Vec<f32> = row.iter().zip(self.centroids.row(c)).map(|(&x, &m)| x - m).collect();
        self.slots.push((c as u32, self.lists[c].len() as u32));
        self.codebook.quantize(&residual, &mut self.codes[c]);
        self.lists[c].push(pos);
        pos
    }

    /// Centroid plus decoded residual.
    pub fn dequantize(&self, pos: u32) -> Vec<f32> {
        let (c, _) = self.slots[pos as usize];
        let base = self.bases.row(c as usize);
        self.code(pos).iter().zip(base).zip(&self.codebook.scale).map(|((&k, &b), &s)| decode(b, k, s)).collect()
    }

    /// `metric.score(q, &self.dequantize(..))` without materializing the row.
    fn score_code(&self, q: &[f32], list: usize, code: &[u8]) -> f64 {
        let base = self.bases.row(list);
        let base = base.as_slice().expect("standard layout");
        let rows = q.iter().zip(code).zip(base).zip(&self.codebook.scale);
        match self.metric {
            Metric::Cosine | Metric::InnerProduct => {
                let mut acc = 0.0f64;
                for (((&x, &k), &b), &s) in rows {
                    acc += x as f64 * decode(b, k, s) as f64;
                }
                acc
            }
            Metric::Euclidean => {
                let mut acc = 0.0f64;
                for (((&x, &k), &b), &s) in rows {
                    let d = x as f64 - decode(b, k, s) as f64;
                    acc += d * d;
                }
                acc.sqrt()
            }
        }
    }

    /// Cluster indices ordered by squared distance from `q`, ties by index.
    fn nearest_lists(&self, q: &[f32], nprobe: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .centroids
            .rows()
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r.iter().zip(q).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>(), c))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if nprobe < d.len() {
            d.select_nth_unstable_by(nprobe - 1, cmp);
            d.truncate(nprobe);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, c)| c).collect()
    }

    /// Top-`k` among rows in the `nprobe` nearest clusters, scored on
    /// dequantized codes. `q` must be prepared like the stored rows.
    pub fn search(&self, q: &[f32], k: usize, nprobe: usize, ids: &[String]) -> Result<Vec<Scored>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::Empty);
        }
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(IndexError::InvalidNprobe { nprobe, nlist: self.nlist() });
        }
        let mut all = Vec::new();
        for c in self.nearest_lists(q, nprobe) {
            for (&pos, code) in self.lists[c].iter().zip(self.codes[c].chunks_exact(self.dim)) {
                all.push(Scored { pos, score: self.score_code(q, c, code) });
            }
        }
        Ok(top_k(all, k, self.metric, ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_flat(n: usize, seed: u64) -> (FlatIndex, Vec<String>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = FlatIndex::new(Metric::Cosine, 16);
        for _ in 0..n {
            let v: Vec<f32> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            f.push(&v).unwrap();
        }
        (f, (0..n).map(|i| format!("v{i:05}")).collect())
    }

    #[test]
    fn every_row_lands_in_exactly_one_list() {
        let (f, _) = random_flat(300, 1);
        let ivf = IvfIndex::build(&f, 7).unwrap();
        assert_eq!(ivf.nlist(), 18);
        let mut seen = vec![0; 300];
        for l in ivf.lists() {
            for &p in l {
                seen[p as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn quantization_error_is_within_half_a_step() {
        let (f, _) = random_flat(200, 2);
        let ivf = IvfIndex::build(&f, 0).unwrap();
        for pos in 0..200u32 {
            let d = ivf.dequantize(pos);
            for (dim, (&a, &b)) in f.row(pos).iter().zip(&d).enumerate() {
                assert!((a - b).abs() <= ivf.codebook.scale[dim] / 2.0 + 1e-6);
            }
        }
    }

    #[test]
    fn full_probe_equals_exhaustive_scan_of_codes() {
        let (f, ids) = random_flat(500, 3);
        let ivf = IvfIndex::build(&f, 0).unwrap();
        let mut deq = FlatIndex::new(Metric::InnerProduct, 16);
        for pos in 0..500 {
            deq.push(&ivf.dequantize(pos)).unwrap();
        }
        for qpos in [0u32, 17, 333] {
            let q = f.row(qpos).to_vec();
            let a = ivf.search(&q, 10, ivf.nlist(), &ids).unwrap();
            let b = deq.search(&q, 10, &ids).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn codebook_clamps_rare_outliers() {
        let mut rows = Array2::from_shape_fn((3000, 2), |(i, d)| ((i * (d + 3)) % 100) as f32 / 100.0);
        rows[[5, 0]] = 50.0;
        let cb = Codebook::fit(rows.view());
        assert!(cb.min[0] + 255.0 * cb.scale[0] < 1.0);
        let mut codes = Vec::new();
        cb.quantize(&[50.0, 0.5], &mut codes);
        assert_eq!(codes[0], 255);
        let mut out = [0.0; 2];
        cb.dequantize(&codes, &mut out);
        assert!((out[1] - 0.5).abs() <= cb.scale[1] / 2.0 + 1e-6);
    }

    #[test]
    fn residuals_survive_a_persisted_round_trip() {
        let (f, _) = random_flat(120, 5);
        let ivf = IvfIndex::build(&f, 1).unwrap();
        let codes: Vec<u8> = (0..120).flat_map(|p| ivf.code(p).to_vec()).collect();
        let back = IvfIndex::from_parts(ivf.metric, ivf.centroids.clone(), ivf.codebook.clone(), ivf.lists.clone(), &codes).unwrap();
        assert_eq!(back, ivf);
        let mut lists = ivf.lists.clone();
        let moved = lists[0].pop().unwrap();
        lists[1].push(moved);
        lists[1].push(moved);
        assert!(IvfIndex::from_parts(ivf.metric, ivf.centroids.clone(), ivf.codebook.clone(), lists, &codes).is_none());
    }

    #[test]
    fn nprobe_bounds() {
        let (f, ids) = random_flat(50, 4);
        let ivf = IvfIndex::build(&f, 0).unwrap();
        assert!(ivf.search(f.row(0), 5, 0, &ids).is_err());
        assert!(ivf.search(f.row(0), 5, ivf.nlist() + 1, &ids).is_err());
    }
}
