use serde::{Deserialize, Serialize};

use super::{FeatureDims, SemanticFeature, VisualFeature};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFrameFeature {
    pub timestep: usize,
    pub vector: Vec<f32>,
}

/// Concatenates the visual vectors of cameras `0..N` followed by their
/// semantic vectors. Both slices must be in camera order with one entry
/// per camera.
pub fn fuse_frame(
    timestep: usize,
    visual: &[VisualFeature],
    semantic: &[SemanticFeature],
    dims: &FeatureDims,
) -> Result<FusedFrameFeature> {
    for (kind, ids) in [
        ("visual", visual.iter().map(|v| v.camera).collect::<Vec<_>>()),
        ("semantic", semantic.iter().map(|s| s.camera).collect()),
    ] {
        if ids.len() != dims.cameras {
            return Err(Error::Integrity(format!(
                "timestep {timestep}: {} {kind} features for {} cameras",
                ids.len(),
                dims.cameras
            )));
        }
        if let Some(n) = ids.iter().enumerate().position(|(n, c)| c.0 != n) {
            return Err(Error::Integrity(format!(
                "timestep {timestep}: {kind} feature for camera {n} missing or out of order"
            )));
        }
    }
    if let Some(v) = visual.iter().find(|v| v.vector.len() != dims.visual_dim) {
        return Err(Error::shape("fuse_frame", dims.visual_dim, v.vector.len()));
    }
    if let Some(s) = semantic.iter().find(|s| s.vector.len() != dims.semantic_dim) {
        return Err(Error::shape("fuse_frame", dims.semantic_dim, s.vector.len()));
    }
    let mut vector = Vec::with_capacity(dims.fused_len());
    for v in visual {
        vector.extend_from_slice(&v.vector);
    }
    for s in semantic {
        vector.extend_from_slice(&s.vector);
    }
    Ok(FusedFrameFeature { timestep, vector })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CameraId;
    use proptest::prelude::*;

    fn vis(c: usize, v: Vec<f32>) -> VisualFeature {
        VisualFeature {
            camera: CameraId(c),
            vector: v,
        }
    }
    fn sem(c: usize, v: Vec<f32>) -> SemanticFeature {
        SemanticFeature {
            camera: CameraId(c),
            vector: v,
        }
    }
    const TINY: FeatureDims = FeatureDims {
        cameras: 2,
        visual_dim: 1,
        semantic_dim: 1,
    };

    #[test]
    fn layout() {
        let f = fuse_frame(0, &[vis(0, vec![1.0]), vis(1, vec![2.0])], &[sem(0, vec![3.0]), sem(1, vec![4.0])], &TINY)
            .unwrap();
        assert_eq!(f.vector, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn full_size_and_offsets() {
        let dims = FeatureDims::new(6, 512);
        let v: Vec<_> = (0..6).map(|c| vis(c, vec![c as f32; 512])).collect();
        let s: Vec<_> = (0..6).map(|c| sem(c, vec![10.0 + c as f32; 138])).collect();
        let f = fuse_frame(3, &v, &s, &dims).unwrap();
        assert_eq!(f.vector.len(), 3900);
        for c in 0..6 {
            assert!(f.vector[dims.visual_range(CameraId(c))].iter().all(|x| *x == c as f32));
            assert!(f.vector[dims.semantic_range(CameraId(c))].iter().all(|x| *x == 10.0 + c as f32));
        }
    }

    #[test]
    fn camera_swap_changes_fusion() {
        let v = [vis(0, vec![1.0]), vis(1, vec![2.0])];
        let s = [sem(0, vec![3.0]), sem(1, vec![4.0])];
        let swapped_v = [vis(0, vec![2.0]), vis(1, vec![1.0])];
        let swapped_s = [sem(0, vec![4.0]), sem(1, vec![3.0])];
        assert_ne!(
            fuse_frame(0, &v, &s, &TINY).unwrap(),
            fuse_frame(0, &swapped_v, &swapped_s, &TINY).unwrap()
        );
    }

    #[test]
    fn missing_camera_is_integrity_error() {
        let err = fuse_frame(0, &[vis(0, vec![1.0])], &[sem(0, vec![3.0]), sem(1, vec![4.0])], &TINY).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        let err = fuse_frame(0, &[vis(1, vec![1.0]), vis(0, vec![1.0])], &[sem(0, vec![3.0]), sem(1, vec![4.0])], &TINY)
            .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    proptest! {
        #[test]
        fn injective(a in proptest::collection::vec(-1e3f32..1e3, 12), b in proptest::collection::vec(-1e3f32..1e3, 12)) {
            let dims = FeatureDims { cameras: 3, visual_dim: 2, semantic_dim: 2 };
            let split = |x: &[f32]| {
                let v: Vec<_> = (0..3).map(|c| vis(c, x[2 * c..2 * c + 2].to_vec())).collect();
                let s: Vec<_> = (0..3).map(|c| sem(c, x[6 + 2 * c..8 + 2 * c].to_vec())).collect();
                fuse_frame(0, &v, &s, &dims).unwrap()
            };
            prop_assert_eq!(a == b, split(&a) == split(&b));
        }
    }
}
