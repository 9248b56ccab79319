//! Language similarity: single-linkage clustering of language centroids,
//! V-measure against language families, and a 2-D PCA layout.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, LanguageCentroid};

const DEFAULT_FAMILIES: &str = include_str!("../resources/families.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

impl ClusterScore {
    fn new(homogeneity: f64, completeness: f64) -> Self {
        let v_measure = if homogeneity + completeness > 0.0 {
            2.0 * homogeneity * completeness / (homogeneity + completeness)
        } else {
            0.0
        };
        ClusterScore {
            homogeneity,
            completeness,
            v_measure,
        }
    }
}

/// Language code to family name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilyLabeling {
    pub assignments: BTreeMap<String, String>,
}

impl FamilyLabeling {
    /// Families of the bundled table.
    pub fn default_families() -> Self {
        Self::parse_tsv(DEFAULT_FAMILIES).expect("bundled family table parses")
    }

    /// `language<TAB>family` lines; `#` starts a comment.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lang, family) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("family table line {}: no tab", i + 1)))?;
            assignments.insert(lang.trim().to_string(), family.trim().to_string());
        }
        Ok(FamilyLabeling { assignments })
    }

    pub fn family(&self, language: &str) -> Option<&str> {
        self.assignments.get(language).map(String::as_str)
    }

    /// Languages of `languages` whose family has at least `min_size`
    /// members among `languages`, in input order.
    pub fn filter_min_family_size<'a>(
        &self,
        languages: &[&'a str],
        min_size: usize,
    ) -> Vec<&'a str> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for l in languages {
            if let Some(f) = self.family(l) {
                *counts.entry(f).or_default() += 1;
            }
        }
        languages
            .iter()
            .copied()
            .filter(|l| self.family(l).is_some_and(|f| counts[f] >= min_size))
            .collect()
    }
}

/// Single-linkage agglomerative clustering under cosine distance, stopped
/// at `k` clusters. Equal distances merge the pair whose smallest language
/// codes sort first. Cluster ids follow first appearance in the input.
pub fn agglomerate(centroids: &[LanguageCentroid], k: usize) -> Result<Vec<usize>> {
    let n = centroids.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "cannot form {k} clusters from {n} centroids"
        )));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&centroids[i].vector, &centroids[j].vector).map_err(|e| {
                Error::validation(format!(
                    "centroids `{}`/`{}`: {e}",
                    centroids[i].language, centroids[j].language
                ))
            })?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    // Clusters are represented by their first member; `key` is the
    // smallest language code inside.
    let mut alive: Vec<bool> = vec![true; n];
    let mut key: Vec<String> = centroids.iter().map(|c| c.language.clone()).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for _ in 0..(n - k) {
        let mut best: Option<(f64, (&str, &str), usize, usize)> = None;
        for a in (0..n).filter(|&a| alive[a]) {
            for b in ((a + 1)..n).filter(|&b| alive[b]) {
                let d = dist[a * n + b];
                let names = if key[a] <= key[b] {
                    (key[a].as_str(), key[b].as_str())
                } else {
                    (key[b].as_str(), key[a].as_str())
                };
                let better = match &best {
                    None => true,
                    Some((bd, bn, _, _)) => d < *bd || (d == *bd && names < *bn),
                };
                if better {
                    best = Some((d, names, a, b));
                }
            }
        }
        let (_, _, a, b) = best.expect("at least two live clusters");
        for c in 0..n {
            let m = dist[a * n + c].min(dist[b * n + c]);
            dist[a * n + c] = m;
            dist[c * n + a] = m;
        }
        alive[b] = false;
        if key[b] < key[a] {
            key[a] = key[b].clone();
        }
        for p in parent.iter_mut() {
            if *p == b {
                *p = a;
            }
        }
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    Ok(parent
        .iter()
        .map(|&root| {
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect())
}

fn entropy<T: Ord>(labels: &[T]) -> f64 {
    let n = labels.len() as f64;
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// `H(a | b)` from the contingency table.
fn conditional_entropy<A: Ord, B: Ord>(a: &[A], b: &[B]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut marginal: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *marginal.entry(y).or_default() += 1;
    }
    -joint
        .iter()
        .map(|(&(_, y), &c)| {
            let c = c as f64;
            c / n * (c / marginal[y] as f64).ln()
        })
        .sum::<f64>()
}

/// Homogeneity, completeness and V-measure of `clusters` against `classes`.
pub fn v_measure_labels<C: Ord, G: Ord>(clusters: &[C], classes: &[G]) -> Result<ClusterScore> {
    if clusters.is_empty() {
        return Err(Error::validation("V-measure of an empty labeling"));
    }
    if clusters.len() != classes.len() {
        return Err(Error::validation(format!(
            "{} cluster labels for {} classes",
            clusters.len(),
            classes.len()
        )));
    }
    let h_class = entropy(classes);
    let h_cluster = entropy(clusters);
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        (1.0 - conditional_entropy(classes, clusters) / h_class).clamp(0.0, 1.0)
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        (1.0 - conditional_entropy(clusters, classes) / h_cluster).clamp(0.0, 1.0)
    };
    Ok(ClusterScore::new(homogeneity, completeness))
}

/// V-measure of per-language cluster labels against their families.
pub fn v_measure(
    languages: &[&str],
    labels: &[usize],
    gold: &FamilyLabeling,
) -> Result<ClusterScore> {
    let families = languages
        .iter()
        .map(|l| {
            gold.family(l)
                .ok_or_else(|| Error::validation(format!("language `{l}` has no family")))
        })
        .collect::<Result<Vec<_>>>()?;
    v_measure_labels(labels, &families)
}

/// Mean score of uniformly random assignments to `k` clusters, one run per
/// seed in `first_seed..first_seed + runs`.
pub fn random_baseline<G: Ord>(
    classes: &[G],
    k: usize,
    first_seed: u64,
    runs: u64,
) -> Result<ClusterScore> {
    if k == 0 || runs == 0 {
        return Err(Error::validation(
            "random baseline needs k >= 1 and at least one run",
        ));
    }
    let (mut h, mut c, mut v) = (0.0, 0.0, 0.0);
    for seed in first_seed..first_seed + runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..classes.len()).map(|_| rng.random_range(0..k)).collect();
        let s = v_measure_labels(&labels, classes)?;
        h += s.homogeneity;
        c += s.completeness;
        v += s.v_measure;
    }
    let n = runs as f64;
    Ok(ClusterScore {
        homogeneity: h / n,
        completeness: c / n,
        v_measure: v / n,
    })
}

/// Coordinates on the first two principal components of the centroids.
/// Each component's loading vector has its largest-magnitude entry
/// positive.
pub fn project_2d(centroids: &[LanguageCentroid]) -> Result<Vec<(f64, f64)>> {
    let n = centroids.len();
    if n < 2 {
        return Err(Error::validation(
            "a 2-D layout needs at least two centroids",
        ));
    }
    let dim = centroids[0].vector.len();
    if centroids.iter().any(|c| c.vector.len() != dim) {
        return Err(Error::validation("centroids differ in dimension"));
    }
    let mut x = DMatrix::from_fn(n, dim, |i, j| centroids[i].vector[j]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut coords = vec![(0.0, 0.0); n];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= 1e-12 * top || lambda <= 0.0 {
            continue;
        }
        let u = eig.eigenvectors.column(idx);
        let loading = x.transpose() * u;
        let pivot = loading.iter().enumerate().fold(0, |best, (i, v)| {
            if v.abs() > loading[best].abs() {
                i
            } else {
                best
            }
        });
        let sign = if loading[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = lambda.sqrt() * sign;
        for i in 0..n {
            let v = u[i] * scale;
            if slot == 0 {
                coords[i].0 = v;
            } else {
                coords[i].1 = v;
            }
        }
    }
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lang: &str, v: Vec<f64>) -> LanguageCentroid {
        LanguageCentroid {
            language: lang.into(),
            vector: v,
            sample_count: 1,
        }
    }

    fn at_angle(lang: &str, deg: f64) -> LanguageCentroid {
        let a = deg.to_radians();
        c(lang, vec![a.cos(), a.sin()])
    }

    #[test]
    fn trivial_cluster_counts() {
        let cs = vec![
            at_angle("a", 0.0),
            at_angle("b", 40.0),
            at_angle("c", 100.0),
        ];
        assert_eq!(agglomerate(&cs, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(agglomerate(&cs, 1).unwrap(), vec![0, 0, 0]);
        assert!(agglomerate(&cs, 0).is_err());
        assert!(agglomerate(&cs, 4).is_err());
    }

    #[test]
    fn close_pair_is_merged_first() {
        // 1 - cos(8.1°) ≈ 0.01; the third point is ~0.9 away from both.
        let cs = vec![at_angle("x", 0.0), at_angle("y", 95.0), at_angle("z", 8.1)];
        let labels = agglomerate(&cs, 2).unwrap();
        assert_eq!(labels[0], labels[2]);
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn equal_distances_merge_smallest_codes() {
        let basis = |i: usize| {
            (0..4)
                .map(|k| f64::from(u8::from(k == i)))
                .collect::<Vec<_>>()
        };
        let cs = vec![
            c("d", basis(0)),
            c("b", basis(1)),
            c("a", basis(2)),
            c("c", basis(3)),
        ];
        // Every pair is exactly 1 apart: (a, b) merges first, then (a, c).
        assert_eq!(agglomerate(&cs, 3).unwrap(), vec![0, 1, 1, 2]);
        assert_eq!(agglomerate(&cs, 2).unwrap(), vec![0, 1, 1, 1]);
    }

    #[test]
    fn v_measure_examples() {
        let s = v_measure_labels(&[0, 0, 1, 1], &["a", "a", "b", "b"]).unwrap();
        assert_eq!(
            (s.homogeneity, s.completeness, s.v_measure),
            (1.0, 1.0, 1.0)
        );

        let s = v_measure_labels(&[1, 2, 1, 2], &["a", "a", "b", "b"]).unwrap();
        assert!(
            s.homogeneity.abs() < 1e-12
                && s.completeness.abs() < 1e-12
                && s.v_measure.abs() < 1e-12
        );

        let s = v_measure_labels(&[1, 1, 2, 3], &["a", "a", "b", "b"]).unwrap();
        assert_eq!(s.homogeneity, 1.0);
        // H(K) = 1.5 ln 2, H(K|C) = 0.5 ln 2.
        assert!((s.completeness - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn v_measure_errors() {
        let empty: [usize; 0] = [];
        assert!(v_measure_labels(&empty, &empty).is_err());
        let fam = FamilyLabeling::parse_tsv("en\tGermanic\n").unwrap();
        assert!(v_measure(&["en", "xx"], &[0, 1], &fam).is_err());
    }

    #[test]
    fn family_table() {
        let fam = FamilyLabeling::default_families();
        assert_eq!(fam.family("cs"), Some("Slavic"));
        assert_eq!(fam.family("fr"), Some("Romance"));
        let kept = fam.filter_min_family_size(&["cs", "pl", "ru", "fr", "es", "eu"], 3);
        assert_eq!(kept, vec!["cs", "pl", "ru"]);
        assert!(FamilyLabeling::parse_tsv("en Germanic").is_err());
    }

    #[test]
    fn random_baseline_is_low_for_structured_families() {
        let classes: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let s = random_baseline(&classes, 4, 0, 100).unwrap();
        assert!(s.v_measure < 0.3, "{s:?}");
        assert_eq!(random_baseline(&classes, 4, 0, 100).unwrap(), s);
    }

    #[test]
    fn planar_points_keep_their_distances() {
        // A plane spanned by two orthonormal directions in 5-D.
        let e1 = [0.6, 0.0, 0.8, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0, 0.0];
        let pts = [(0.0, 0.0), (3.0, 1.0), (-1.0, 2.0), (2.0, -2.5), (0.5, 0.7)];
        let cs: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                c(
                    &i.to_string(),
                    (0..5).map(|k| a * e1[k] + b * e2[k] + 1.0).collect(),
                )
            })
            .collect();
        let xy = project_2d(&cs).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let orig = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                let got = ((xy[i].0 - xy[j].0).powi(2) + (xy[i].1 - xy[j].1).powi(2)).sqrt();
                assert!((orig - got).abs() < 1e-6);
            }
        }
        let var = |f: &dyn Fn(&(f64, f64)) -> f64| xy.iter().map(|p| f(p).powi(2)).sum::<f64>();
        assert!(var(&|p| p.0) >= var(&|p| p.1));
    }

    #[test]
    fn identical_points_sit_at_the_origin() {
        let cs = vec![c("a", vec![1.0, 2.0, 3.0]); 4];
        assert!(project_2d(&cs).unwrap().iter().all(|&p| p == (0.0, 0.0)));
        assert!(project_2d(&cs[..1]).is_err());
    }
}
