//! Bundle directory format: `manifest.json` plus one raw blob per array.
//!
//! Blobs are little-endian 32-bit floats, row-major, no header; a blob's
//! byte length must equal 4 x product(dims). Manifest serialization is
//! deterministic (struct field order, sorted shape map), so saving the
//! same bundle twice yields the same digest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    ClassCatalog, ClassTextFeatures, DataError, PromptCounts, Provenance, SupportSetBundle,
    TestInstanceBundle,
};
use crate::numerics::{DenseMatrix, FeatureBlock};

pub const SCHEMA_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    kind: String,
    dtype: String,
    shapes: BTreeMap<String, Vec<usize>>,
    normalized: bool,
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_counts: Option<PromptCountsField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Vec<(usize, usize, usize, bool)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Option<usize>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PromptCountsField {
    #[serde(rename = "M")]
    available: usize,
    m: usize,
    n: usize,
}

fn write_blob(dir: &Path, name: &str, data: &[f32]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = fs::File::create(dir.join(format!("{name}.bin")))?;
    file.write_all(&bytes)?;
    Ok(())
}

fn read_blob(dir: &Path, name: &str, dims: &[usize]) -> Result<Vec<f32>, DataError> {
    let path = dir.join(format!("{name}.bin"));
    let bytes = fs::read(&path)?;
    let expected = 4 * dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(DataError::CorruptBlob {
            name: name.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<String, DataError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), json.as_bytes())?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn read_manifest(dir: &Path, expected_kind: &str) -> Result<Manifest, DataError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(DataError::SchemaMismatch(format!(
            "unsupported schema_version {}",
            manifest.schema_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(DataError::SchemaMismatch(format!(
            "unsupported dtype '{}'",
            manifest.dtype
        )));
    }
    if manifest.kind != expected_kind {
        return Err(DataError::SchemaMismatch(format!(
            "expected kind '{expected_kind}', found '{}'",
            manifest.kind
        )));
    }
    Ok(manifest)
}

fn shape<'a>(manifest: &'a Manifest, name: &str) -> Result<&'a [usize], DataError> {
    manifest
        .shapes
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| DataError::ShapeMismatch(format!("manifest lacks shape for '{name}'")))
}

/// Persist class-text features; returns the manifest content digest.
pub fn save_class_text(
    dir: &Path,
    catalog: &ClassCatalog,
    features: &ClassTextFeatures<f32>,
) -> Result<String, DataError> {
    if features.classes() != catalog.len() {
        return Err(DataError::InvariantViolation(format!(
            "class-text rows {} != catalog size {}",
            features.classes(),
            catalog.len()
        )));
    }
    let mut shapes = BTreeMap::new();
    shapes.insert("W".to_string(), vec![features.classes(), features.dim()]);
    fs::create_dir_all(dir)?;
    write_blob(dir, "W", features.matrix().data())?;
    write_manifest(
        dir,
        &Manifest {
            schema_version: SCHEMA_VERSION,
            kind: "class_text".into(),
            dtype: DTYPE.into(),
            shapes,
            normalized: features.is_normalized(),
            classes: catalog.names().to_vec(),
            prompt_counts: None,
            provenance: None,
            ground_truth: None,
        },
    )
}

pub fn load_class_text(dir: &Path) -> Result<(ClassCatalog, ClassTextFeatures<f32>), DataError> {
    let manifest = read_manifest(dir, "class_text")?;
    let dims = shape(&manifest, "W")?.to_vec();
    if dims.len() != 2 || dims[0] != manifest.classes.len() {
        return Err(DataError::ShapeMismatch(format!(
            "W shape {dims:?} inconsistent with {} classes",
            manifest.classes.len()
        )));
    }
    let data = read_blob(dir, "W", &dims)?;
    let catalog = ClassCatalog::new(manifest.classes.clone())?;
    let matrix = DenseMatrix::from_vec(dims[0], dims[1], data)
        .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
    Ok((catalog, ClassTextFeatures::new(matrix, manifest.normalized)?))
}

/// Persist a support set; refuses bundles that fail their invariants.
pub fn save_support(
    dir: &Path,
    catalog: &ClassCatalog,
    bundle: &SupportSetBundle<f32>,
) -> Result<String, DataError> {
    bundle.validate()?;
    if bundle.classes() != catalog.len() {
        return Err(DataError::InvariantViolation(format!(
            "support classes {} != catalog size {}",
            bundle.classes(),
            catalog.len()
        )));
    }
    let mut shapes = BTreeMap::new();
    shapes.insert(
        "F".to_string(),
        vec![bundle.videos(), bundle.frames(), bundle.dim()],
    );
    shapes.insert(
        "L".to_string(),
        vec![bundle.labels.rows(), bundle.labels.cols()],
    );
    fs::create_dir_all(dir)?;
    write_blob(dir, "F", bundle.features.data())?;
    write_blob(dir, "L", bundle.labels.data())?;
    write_manifest(
        dir,
        &Manifest {
            schema_version: SCHEMA_VERSION,
            kind: "support_set".into(),
            dtype: DTYPE.into(),
            shapes,
            normalized: false,
            classes: catalog.names().to_vec(),
            prompt_counts: Some(PromptCountsField {
                available: bundle.prompt_counts.available,
                m: bundle.prompt_counts.sampled,
                n: bundle.prompt_counts.repeats,
            }),
            provenance: Some(
                bundle
                    .provenance
                    .iter()
                    .map(|p| (p.class, p.prompt, p.repeat, p.outlier))
                    .collect(),
            ),
            ground_truth: None,
        },
    )
}

pub fn load_support(dir: &Path) -> Result<(ClassCatalog, SupportSetBundle<f32>), DataError> {
    let manifest = read_manifest(dir, "support_set")?;
    let f_dims = shape(&manifest, "F")?.to_vec();
    let l_dims = shape(&manifest, "L")?.to_vec();
    if f_dims.len() != 3 || l_dims.len() != 2 {
        return Err(DataError::ShapeMismatch(format!(
            "support shapes F{f_dims:?} L{l_dims:?} must be rank 3 and 2"
        )));
    }
    if l_dims[0] != f_dims[0] || l_dims[1] != manifest.classes.len() {
        return Err(DataError::ShapeMismatch(format!(
            "L shape {l_dims:?} inconsistent with F{f_dims:?} and {} classes",
            manifest.classes.len()
        )));
    }
    let counts = manifest.prompt_counts.ok_or_else(|| {
        DataError::SchemaMismatch("support manifest lacks prompt_counts".into())
    })?;
    let raw_provenance = manifest
        .provenance
        .as_ref()
        .ok_or_else(|| DataError::SchemaMismatch("support manifest lacks provenance".into()))?;
    if raw_provenance.len() != f_dims[0] {
        return Err(DataError::ShapeMismatch(format!(
            "provenance length {} != video count {}",
            raw_provenance.len(),
            f_dims[0]
        )));
    }
    let features = FeatureBlock::from_vec(
        f_dims[0],
        f_dims[1],
        f_dims[2],
        read_blob(dir, "F", &f_dims)?,
    )
    .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
    let labels = DenseMatrix::from_vec(l_dims[0], l_dims[1], read_blob(dir, "L", &l_dims)?)
        .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
    let bundle = SupportSetBundle {
        features,
        labels,
        provenance: raw_provenance
            .iter()
            .map(|&(class, prompt, repeat, outlier)| Provenance {
                class,
                prompt,
                repeat,
                outlier,
            })
            .collect(),
        prompt_counts: PromptCounts {
            available: counts.available,
            sampled: counts.m,
            repeats: counts.n,
        },
    };
    bundle.validate()?;
    Ok((ClassCatalog::new(manifest.classes)?, bundle))
}

/// Persist a test instance; returns the manifest content digest.
pub fn save_test(
    dir: &Path,
    catalog: &ClassCatalog,
    bundle: &TestInstanceBundle<f32>,
) -> Result<String, DataError> {
    bundle.validate()?;
    if let Some(gt) = bundle.ground_truth {
        if gt >= catalog.len() {
            return Err(DataError::InvariantViolation(format!(
                "ground truth {gt} outside catalog of {}",
                catalog.len()
            )));
        }
    }
    let mut shapes = BTreeMap::new();
    shapes.insert(
        "views".to_string(),
        vec![bundle.view_count(), bundle.frames(), bundle.dim()],
    );
    shapes.insert(
        "original".to_string(),
        vec![bundle.original.rows(), bundle.original.cols()],
    );
    fs::create_dir_all(dir)?;
    write_blob(dir, "views", bundle.views.data())?;
    write_blob(dir, "original", bundle.original.data())?;
    write_manifest(
        dir,
        &Manifest {
            schema_version: SCHEMA_VERSION,
            kind: "test_instance".into(),
            dtype: DTYPE.into(),
            shapes,
            normalized: false,
            classes: catalog.names().to_vec(),
            prompt_counts: None,
            provenance: None,
            ground_truth: Some(bundle.ground_truth),
        },
    )
}

pub fn load_test(dir: &Path) -> Result<(ClassCatalog, TestInstanceBundle<f32>), DataError> {
    let manifest = read_manifest(dir, "test_instance")?;
    let v_dims = shape(&manifest, "views")?.to_vec();
    let o_dims = shape(&manifest, "original")?.to_vec();
    if v_dims.len() != 3 || o_dims.len() != 2 {
        return Err(DataError::ShapeMismatch(format!(
            "test shapes views{v_dims:?} original{o_dims:?} must be rank 3 and 2"
        )));
    }
    if o_dims != [v_dims[1], v_dims[2]] {
        return Err(DataError::ShapeMismatch(format!(
            "original shape {o_dims:?} inconsistent with views {v_dims:?}"
        )));
    }
    let views = FeatureBlock::from_vec(
        v_dims[0],
        v_dims[1],
        v_dims[2],
        read_blob(dir, "views", &v_dims)?,
    )
    .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
    let original = DenseMatrix::from_vec(o_dims[0], o_dims[1], read_blob(dir, "original", &o_dims)?)
        .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
    let ground_truth = manifest.ground_truth.flatten();
    let bundle = TestInstanceBundle {
        views,
        original,
        ground_truth,
    };
    bundle.validate()?;
    Ok((ClassCatalog::new(manifest.classes)?, bundle))
}
