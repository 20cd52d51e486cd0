use conformal_reach::hull::{SurrogateOptions, SurrogateSizes};
use conformal_reach::model::{argmax, LogitTensor};
use conformal_reach::perturb::{build_darkening, DARKENING_THRESHOLD};
use conformal_reach::toy::synthetic_segmentation;
use conformal_reach::verify::{
    baseline_mask, run_naive_pipeline, run_surrogate_pipeline, NaiveSizes, PixelStatus, PixelStatusMask,
};
use conformal_reach::{MlpNetwork, PerturbationSpec};

const GRID: usize = 101;

/// Per pixel: does any grid point change the class, and does every one?
fn grid_oracle(model: &MlpNetwork, spec: &PerturbationSpec) -> (Vec<bool>, Vec<bool>) {
    let base = baseline_mask(model, spec).unwrap();
    let (lo, hi) = (spec.lambda_lower(), spec.lambda_upper());
    assert_eq!(lo.len(), 2);
    let pixels = base.classes.len();
    let mut any = vec![false; pixels];
    let mut all = vec![true; pixels];
    for i in 0..GRID {
        for j in 0..GRID {
            let at = |k: usize, s: usize| (lo[k] + (hi[k] - lo[k]) * s as f64 / (GRID - 1) as f64).min(hi[k]);
            let x = spec.apply(&[at(0, i), at(1, j)]).unwrap();
            let y = LogitTensor::from_flat(4, 4, model.infer(x.flatten()).unwrap()).unwrap();
            for p in 0..pixels {
                let flipped = argmax(y.pixel(p / 4, p % 4)).0 != base.classes[p];
                any[p] |= flipped;
                all[p] &= flipped;
            }
        }
    }
    (any, all)
}

fn check_against_grid(mask: &PixelStatusMask, any: &[bool], all: &[bool]) {
    for p in 0..16 {
        match mask.get(p / 4, p % 4) {
            PixelStatus::Robust => assert!(!any[p], "robust pixel {p} flips on the grid"),
            PixelStatus::Nonrobust => assert!(all[p], "nonrobust pixel {p} keeps its class somewhere"),
            PixelStatus::Unknown => {}
        }
    }
}

fn setup(e: f64) -> (MlpNetwork, PerturbationSpec) {
    let (model, image) = synthetic_segmentation().unwrap();
    let spec = build_darkening(image, 1.0, DARKENING_THRESHOLD, e, 0).unwrap();
    (model, spec)
}

#[test]
fn naive_statuses_agree_with_grid() {
    for (e, seed) in [(0.1, 0), (0.1, 11), (0.3, 5)] {
        let (model, spec) = setup(e);
        let (any, all) = grid_oracle(&model, &spec);
        let sizes = NaiveSizes { train_t: 1000, calib_m: 8000 };
        let run = run_naive_pipeline(&model, &spec, sizes, 1e-3, 7999, seed).unwrap();
        check_against_grid(&run.mask, &any, &all);
        let grid_rv = 100.0 * any.iter().filter(|f| !**f).count() as f64 / 16.0;
        assert_eq!(run.mask.rv, grid_rv, "e = {e}, seed = {seed}");
    }
}

#[test]
fn surrogate_statuses_are_sound_on_grid() {
    let (model, spec) = setup(0.1);
    let (any, all) = grid_oracle(&model, &spec);
    let sizes = SurrogateSizes { train_t: 1000, aux_t: 1000, calib_m: 8000, components: 2 };
    let run = run_surrogate_pipeline(&model, &spec, sizes, 1e-3, 7999, 3, &SurrogateOptions::default()).unwrap();
    check_against_grid(&run.mask, &any, &all);
}

#[test]
fn darkening_more_never_certifies_less_on_the_grid() {
    // A larger minimum darkening shrinks the λ box, so grid flips can only vanish.
    let mut previous = usize::MAX;
    for e in [0.05, 0.2, 0.4, 0.6, 0.85] {
        let (model, spec) = setup(e);
        let flips = grid_oracle(&model, &spec).0.iter().filter(|f| **f).count();
        assert!(flips <= previous);
        previous = flips;
    }
}
