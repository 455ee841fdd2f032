//! Differentiable projective geometry: the four-point homography
//! parameterisation, the bilinear sampler and the synthetic perturbation
//! models.

pub mod homography;
pub mod perturb;
pub mod sampler;

pub use homography::{
    canonical_corners, compose, corners_to_homography, inverse_with_jacobian, Homography, WarpParams,
};
pub use perturb::{
    apply_affine, item_rng, perturb_affine, perturb_perspective, perturb_perspective_seeded, sample_perspective,
    AffineDraw, AffineRanges, PerspectiveDraw, PerturbModel,
};
pub use sampler::{warp_batch, warp_image};
