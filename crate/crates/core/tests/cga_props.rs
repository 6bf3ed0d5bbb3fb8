use cvit::cga::{attention, CViTBlock, Cga};
use cvit::nn::{self, Layer, Mode};
use cvit::train::{gradcheck_module, GradcheckTarget};
use cvit::{ModelConfig, RngState, Tensor, Var};
use proptest::prelude::*;

fn randomized_cga(dim: usize, heads: usize, seed: u64) -> Cga<f64> {
    let mut g = RngState::new(seed).generator();
    let cga = Cga::new(dim, heads, &mut g).unwrap();
    for (_, p) in nn::parameters(&cga) {
        p.set_value(g.normal_tensor(&p.shape(), 0.5)).unwrap();
    }
    nn::set_mode(&cga, Mode::Eval);
    cga
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn later_heads_do_not_reach_back(seed in 0u64..100_000, heads in 2usize..4, width in 1usize..4) {
        let dim = heads * width;
        let cga = randomized_cga(dim, heads, seed);
        let x = RngState::new(seed + 1).generator().normal_tensor::<f64>(&[1, dim, 3, 3], 1.0);
        let base = cga.forward_detailed(&Var::constant(x.clone())).unwrap();
        for j in 0..heads {
            let mut y = x.clone();
            y.data_mut()[j * width * 9] += 1.0;
            let out = cga.forward_detailed(&Var::constant(y)).unwrap();
            for i in 0..j {
                prop_assert!(out.heads[i].value().bit_eq(&base.heads[i].value()));
            }
        }
    }

    #[test]
    fn attention_commutes_with_token_permutation(seed in 0u64..100_000, t in 2usize..10, perm_seed in 0u64..1000) {
        let mut g = RngState::new(seed).generator();
        let q = g.normal_tensor::<f64>(&[1, 4, t], 1.0);
        let k = g.normal_tensor::<f64>(&[1, 4, t], 1.0);
        let v = g.normal_tensor::<f64>(&[1, 3, t], 1.0);
        let mut perm: Vec<usize> = (0..t).collect();
        RngState::new(perm_seed).generator().shuffle(&mut perm);
        let permute = |x: &Tensor<f64>| {
            let rows = x.shape()[1];
            Tensor::from_fn([1, rows, t], |i| {
                let (r, j) = (i / t, i % t);
                x.data()[r * t + perm[j]]
            })
        };
        let (out, _) = attention(&Var::constant(q.clone()), &Var::constant(k.clone()), &Var::constant(v.clone()), 0.5).unwrap();
        let (pout, _) = attention(
            &Var::constant(permute(&q)),
            &Var::constant(permute(&k)),
            &Var::constant(permute(&v)),
            0.5,
        ).unwrap();
        let diff = permute(&out.to_tensor()).max_abs_diff(&pout.to_tensor()).unwrap();
        prop_assert!(diff < 1e-12);
    }
}

#[test]
fn block_keeps_shape_for_every_preset_stage() {
    for name in ["S", "M", "L", "XL"] {
        let cfg = ModelConfig::preset(name).unwrap();
        for s in 0..3 {
            let mut g = RngState::new(0).generator();
            let blk = CViTBlock::<f32>::new(cfg.heads[s], cfg.ffn(s), cfg.ffn(s), &mut g).unwrap();
            nn::set_mode(&blk, Mode::Eval);
            let x = Var::constant(g.normal_tensor::<f32>(&[1, cfg.dims[s], 4, 4], 1.0));
            assert_eq!(
                blk.forward(&x).unwrap().shape(),
                vec![1, cfg.dims[s], 4, 4],
                "{name} stage {s}"
            );
        }
    }
}

#[test]
fn attention_and_block_gradient_checks() {
    for t in [GradcheckTarget::Cga, GradcheckTarget::Block] {
        let r = gradcheck_module(t, 8, 2).unwrap();
        assert!(r.max_rel_err < 1e-4, "{t:?}: {r:?}");
    }
}
