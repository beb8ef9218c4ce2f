//! Synthetic spatio-temporal scenes.
//!
//! A square grid is tiled into rectangular fields. Each labeled field gets a
//! finest-level class; class pixel shares follow a Zipf law over a seeded
//! ranking of the classes. A class's temporal signature is the sum of one
//! bump-shaped component per ancestor, with amplitudes shrinking towards the
//! finer levels, so coarse classes are easier to tell apart than their
//! children. Channels mix the components with fixed per-node gains, then
//! field-level and pixel-level Gaussian noise is added. Whole frames of a
//! patch can be replaced by a constant cloud value. Folds are horizontal
//! strips of the grid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{count_classes, fold_lists, hierarchy_file::write_hierarchy, write_dataset, DataError, Dataset, DatasetManifest, SequenceSample};
use crate::hierarchy::{ClassId, LabelHierarchy, UNLABELED};
use crate::rng::{self, Rng, Stream};

/// Reflectance written into every band of an occluded frame.
pub const CLOUD_VALUE: f32 = 0.95;

const BASE_REFLECTANCE: f64 = 0.45;
const COARSE_AMPLITUDE: f64 = 0.3;
const AMPLITUDE_DECAY: f64 = 0.5;
const RANK_STREAM_SALT: u64 = 0x5eed_0f_c1a55;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub grid_size: usize,
    pub patch_size: usize,
    pub time_steps: usize,
    pub bands: usize,
    /// Children per node, root level first: `[3, 2, 2]` gives 3 / 6 / 12 classes.
    pub branching: Vec<usize>,
    pub zipf_exponent: f64,
    pub noise: f64,
    /// Target share of pixels without a reference label.
    pub unlabeled_fraction: f64,
    /// Mean share of occluded frames per patch.
    pub occlusion_fraction: f64,
    pub field_min: usize,
    pub field_max: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            grid_size: 480,
            patch_size: 24,
            time_steps: 71,
            bands: 4,
            branching: vec![3, 2, 2],
            zipf_exponent: 1.5,
            noise: 0.05,
            unlabeled_fraction: 0.48,
            occlusion_fraction: 0.1,
            field_min: 4,
            field_max: 16,
            folds: 5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Generator(m));
        if self.patch_size == 0 || self.grid_size == 0 {
            return fail("grid and patch sizes must be positive".into());
        }
        if self.grid_size % self.patch_size != 0 {
            return fail(format!(
                "patch size {} does not divide grid size {}",
                self.patch_size, self.grid_size
            ));
        }
        if self.time_steps == 0 || self.bands == 0 {
            return fail("time steps and bands must be positive".into());
        }
        if self.branching.is_empty() || self.branching.contains(&0) {
            return fail("branching factors must be positive".into());
        }
        let fine: usize = self.branching.iter().product();
        if fine >= UNLABELED as usize {
            return fail(format!("{fine} finest classes exceed the label range"));
        }
        if self.field_min == 0 || self.field_min > self.field_max {
            return fail(format!("invalid field size range {}..={}", self.field_min, self.field_max));
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return fail("unlabeled fraction must lie in [0, 1)".into());
        }
        if !(0.0..=0.5).contains(&self.occlusion_fraction) {
            return fail("occlusion fraction must lie in [0, 0.5]".into());
        }
        if self.noise < 0.0 || self.zipf_exponent < 0.0 {
            return fail("noise and Zipf exponent must be non-negative".into());
        }
        let rows = self.grid_size / self.patch_size;
        if self.folds == 0 || self.folds > rows || self.folds > u8::MAX as usize {
            return fail(format!("{} folds for {rows} patch rows", self.folds));
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> LabelHierarchy {
        LabelHierarchy::balanced(&self.branching)
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("grid_size".into(), self.grid_size.to_string()),
            ("patch_size".into(), self.patch_size.to_string()),
            ("time_steps".into(), self.time_steps.to_string()),
            ("bands".into(), self.bands.to_string()),
            ("branching".into(), join(&self.branching)),
            ("zipf_exponent".into(), self.zipf_exponent.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("unlabeled_fraction".into(), self.unlabeled_fraction.to_string()),
            ("occlusion_fraction".into(), self.occlusion_fraction.to_string()),
            ("field_min".into(), self.field_min.to_string()),
            ("field_max".into(), self.field_max.to_string()),
            ("folds".into(), self.folds.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Target pixel share of every finest class.
pub fn zipf_targets(config: &GeneratorConfig) -> Vec<f64> {
    let fine: usize = config.branching.iter().product();
    let mut ranks: Vec<usize> = (0..fine).collect();
    ranks.shuffle(&mut rng::from_seed(config.seed ^ RANK_STREAM_SALT));
    let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

struct Component {
    center: f64,
    width: f64,
    gains: Vec<f64>,
}

impl Component {
    fn random(rng: &mut Rng, bands: usize) -> Self {
        Component {
            center: rng.random_range(0.15..0.85),
            width: rng.random_range(0.06..0.2),
            gains: (0..bands).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn at(&self, phase: f64, band: usize) -> f64 {
        let z = (phase - self.center) / self.width;
        self.gains[band] * (-0.5 * z * z).exp()
    }
}

#[derive(Clone, Copy)]
struct Field {
    class: ClassId,
    jitter: f64,
    background: usize,
}

/// Builds a dataset in memory.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let hierarchy = config.hierarchy();
    let mut rng = rng::stream(config.seed, Stream::Data);
    let g = config.grid_size;
    let (t_len, bands) = (config.time_steps, config.bands);

    // per-level components, one per node
    let components: Vec<Vec<Component>> = (1..=hierarchy.levels())
        .map(|l| (0..hierarchy.classes_at(l)).map(|_| Component::random(&mut rng, bands)).collect())
        .collect();
    let amplitudes: Vec<f64> = (0..hierarchy.levels()).map(|l| COARSE_AMPLITUDE * AMPLITUDE_DECAY.powi(l as i32)).collect();
    let fine = hierarchy.finest_classes();
    // signature[c][t * bands + b]
    let signatures: Vec<Vec<f64>> = (0..fine)
        .map(|c| {
            let lineage = hierarchy.lineage(c as ClassId);
            let mut sig = vec![BASE_REFLECTANCE; t_len * bands];
            for t in 0..t_len {
                let phase = (t as f64 + 0.5) / t_len as f64;
                for b in 0..bands {
                    for (l, &node) in lineage.iter().enumerate() {
                        sig[t * bands + b] += amplitudes[l] * components[l][node as usize].at(phase, b);
                    }
                }
            }
            sig
        })
        .collect();
    let backgrounds: Vec<Component> = (0..8).map(|_| Component::random(&mut rng, bands)).collect();

    // tile the grid into fields
    let mut field_map = vec![0u32; g * g];
    let mut field_area: Vec<usize> = vec![0];
    let mut y = 0;
    while y < g {
        let fh = rng.random_range(config.field_min..=config.field_max).min(g - y);
        let mut x = 0;
        while x < g {
            let fw = rng.random_range(config.field_min..=config.field_max).min(g - x);
            let id = field_area.len() as u32;
            for yy in y..y + fh {
                field_map[yy * g + x..yy * g + x + fw].fill(id);
            }
            field_area.push(fh * fw);
            x += fw;
        }
        y += fh;
    }
    let n_fields = field_area.len();

    // labeled fields and their classes
    let labeled: Vec<bool> = (0..n_fields).map(|i| i > 0 && rng.random::<f64>() >= config.unlabeled_fraction).collect();
    let targets = zipf_targets(config);
    let mut order: Vec<usize> = (1..n_fields).filter(|&i| labeled[i]).collect();
    order.shuffle(&mut rng);
    let mut assigned = vec![0f64; fine];
    let mut total = 0f64;
    let mut fields = vec![
        Field {
            class: UNLABELED,
            jitter: 0.0,
            background: 0,
        };
        n_fields
    ];
    for &f in &order {
        let area = field_area[f] as f64;
        let class = (0..fine)
            .max_by(|&a, &b| {
                let da = targets[a] * (total + area) - assigned[a];
                let db = targets[b] * (total + area) - assigned[b];
                da.partial_cmp(&db).expect("finite deficits").then(b.cmp(&a))
            })
            .expect("at least one class");
        assigned[class] += area;
        total += area;
        fields[f].class = class as ClassId;
    }
    for field in fields.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        field.jitter = z;
        field.background = rng.random_range(0..backgrounds.len());
    }

    // cut patches
    let p = config.patch_size;
    let rows = g / p;
    let cloud_max = ((2.0 * config.occlusion_fraction * t_len as f64).round() as usize).min(t_len);
    let mut samples = Vec::with_capacity(rows * rows);
    for pr in 0..rows {
        let fold_id = (pr * config.folds / rows) as u8;
        for pc in 0..rows {
            let mut field_ids = vec![0u32; p * p];
            let mut fine_labels = vec![UNLABELED; p * p];
            for yy in 0..p {
                for xx in 0..p {
                    let gid = field_map[(pr * p + yy) * g + pc * p + xx] as usize;
                    if labeled[gid] {
                        field_ids[yy * p + xx] = gid as u32;
                        fine_labels[yy * p + xx] = fields[gid].class;
                    }
                }
            }
            let mut frames: Vec<usize> = (0..t_len).collect();
            let n_cloud = rng.random_range(0..=cloud_max);
            let (cloudy, _) = frames.partial_shuffle(&mut rng, n_cloud);
            let mut occluded_frames = vec![false; t_len];
            for &t in cloudy.iter() {
                occluded_frames[t] = true;
            }
            let mut inputs = vec![0f32; t_len * bands * p * p];
            for t in 0..t_len {
                let phase = (t as f64 + 0.5) / t_len as f64;
                for b in 0..bands {
                    let plane = &mut inputs[(t * bands + b) * p * p..(t * bands + b + 1) * p * p];
                    if occluded_frames[t] {
                        plane.fill(CLOUD_VALUE);
                        continue;
                    }
                    for yy in 0..p {
                        for xx in 0..p {
                            let gid = field_map[(pr * p + yy) * g + pc * p + xx] as usize;
                            let field = &fields[gid];
                            let clean = if labeled[gid] {
                                signatures[field.class as usize][t * bands + b]
                            } else {
                                BASE_REFLECTANCE + COARSE_AMPLITUDE * backgrounds[field.background].at(phase, b)
                            };
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            let v = BASE_REFLECTANCE
                                + (clean - BASE_REFLECTANCE) * (1.0 + config.noise * field.jitter)
                                + config.noise * eps;
                            plane[yy * p + xx] = v.clamp(0.0, 1.0) as f32;
                        }
                    }
                }
            }
            if fine_labels.iter().all(|&c| c == UNLABELED) {
                continue;
            }
            samples.push(SequenceSample {
                time_steps: t_len,
                bands,
                height: p,
                width: p,
                inputs,
                fine_labels,
                field_ids,
                fold_id,
                occluded_frames,
                origin: [(pr * p) as u32, (pc * p) as u32],
            });
        }
    }
    let class_counts = count_classes(&samples, fine);
    let folds = fold_lists(&samples, config.folds);
    Ok(Dataset {
        manifest: DatasetManifest {
            samples: samples.len(),
            time_steps: t_len,
            bands,
            height: p,
            width: p,
            fine_classes: fine,
            hierarchy: String::new(),
            folds,
            class_counts,
            echo: config.echo(),
        },
        hierarchy,
        samples,
    })
}

/// Generates a dataset and writes it to `path`, with the hierarchy next to it.
pub fn generate_to_disk(config: &GeneratorConfig, path: &Path) -> Result<Dataset, DataError> {
    let mut dataset = generate(config)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let hierarchy_name = format!("{stem}.hierarchy.csv");
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_hierarchy(&dir.join(&hierarchy_name), &dataset.hierarchy, &dataset.manifest.echo)?;
    dataset.manifest.hierarchy = hierarchy_name;
    write_dataset(path, &dataset)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

/// Fine class of every labeled field, keyed by field id.
fn field_classes(samples: &[SequenceSample]) -> BTreeMap<u32, Vec<ClassId>> {
    let mut out: BTreeMap<u32, Vec<ClassId>> = BTreeMap::new();
    for s in samples {
        for (&f, &c) in s.field_ids.iter().zip(&s.fine_labels) {
            if f > 0 {
                let e = out.entry(f).or_default();
                if !e.contains(&c) {
                    e.push(c);
                }
            }
        }
    }
    out
}

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            grid_size: 48,
            patch_size: 12,
            time_steps: 8,
            bands: 3,
            branching: vec![2, 2],
            field_min: 3,
            field_max: 7,
            folds: 4,
            seed: 5,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn rejects_non_dividing_patch() {
        let c = GeneratorConfig {
            grid_size: 50,
            patch_size: 12,
            ..small()
        };
        assert!(matches!(generate(&c), Err(DataError::Generator(m)) if m.contains("divide")));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&GeneratorConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn fields_carry_one_label_and_labels_need_fields() {
        let d = generate(&small()).unwrap();
        for s in &d.samples {
            for (&f, &c) in s.field_ids.iter().zip(&s.fine_labels) {
                assert_eq!(f == 0, c == UNLABELED);
            }
        }
        assert!(field_classes(&d.samples).values().all(|v| v.len() == 1));
    }

    #[test]
    fn noise_free_pixels_of_a_class_agree() {
        let c = GeneratorConfig {
            noise: 0.0,
            occlusion_fraction: 0.0,
            ..small()
        };
        let d = generate(&c).unwrap();
        let s = &d.samples[0];
        let plane = s.pixels();
        let mut seen: BTreeMap<ClassId, usize> = BTreeMap::new();
        for p in 0..plane {
            let c = s.fine_labels[p];
            if c == UNLABELED {
                continue;
            }
            match seen.get(&c) {
                None => {
                    seen.insert(c, p);
                }
                Some(&q) => {
                    for f in 0..s.time_steps * s.bands {
                        assert_eq!(s.inputs[f * plane + p], s.inputs[f * plane + q]);
                    }
                }
            }
        }
    }

    #[test]
    fn cloud_frames_are_constant() {
        let c = GeneratorConfig {
            occlusion_fraction: 0.5,
            ..small()
        };
        let d = generate(&c).unwrap();
        let s = d.samples.iter().find(|s| s.occluded_frames.iter().any(|&o| o)).unwrap();
        let plane = s.pixels();
        for t in (0..s.time_steps).filter(|&t| s.occluded_frames[t]) {
            let frame = &s.inputs[t * s.bands * plane..(t + 1) * s.bands * plane];
            assert!(frame.iter().all(|&v| v == CLOUD_VALUE));
        }
    }

    #[test]
    fn values_in_unit_range() {
        let d = generate(&small()).unwrap();
        assert!(d.samples.iter().all(|s| s.inputs.iter().all(|&v| (0.0..=1.0).contains(&v))));
    }
}
