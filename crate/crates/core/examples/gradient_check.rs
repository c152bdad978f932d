//! Finite-difference check of the reverse pass: first a two-layer network
//! built by hand on the tape, then the full toy language model with dropout
//! active.
//!
//!     cargo run --release --example gradient_check

use anyhow::Result;
use codemix::neural::{grad_check, grad_check_stencil, Graph, Mode, ParamStore, Stencil, Tensor};
use codemix::rng::RngStream;
use codemix::tokenizer::TokenId;
use codemix::ulmfit::{bptt_batches, lm_loss, new_lm, AwdLstmConfig, DropoutNoise, HiddenState, UnfreezeScope};

fn main() -> Result<()> {
    let mut rng = RngStream::new(1);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Tensor::uniform(&[4, 6], 0.5, &mut rng));
    let b1 = store.add("b1", Tensor::uniform(&[6], 0.5, &mut rng));
    let w2 = store.add("w2", Tensor::uniform(&[6, 3], 0.5, &mut rng));
    let b2 = store.add("b2", Tensor::uniform(&[3], 0.5, &mut rng));
    let x = Tensor::uniform(&[5, 4], 1.0, &mut rng);
    let targets = [0, 2, 1, 1, 0];
    let report = grad_check(
        &mut store,
        |p, _| {
            let mut g = Graph::new();
            let x = g.constant(x.clone());
            let (w1, b1, w2, b2) = (g.param(p, w1, true), g.param(p, b1, true), g.param(p, w2, true), g.param(p, b2, true));
            let h = g.linear(x, w1, b1);
            let h = g.tanh(h);
            let logits = g.linear(h, w2, b2);
            let loss = g.softmax_cross_entropy(logits, &targets).expect("shapes agree");
            (g.value(loss).data[0], g.backward(loss, p.len()))
        },
        1e-5,
    );
    println!("mlp: {} entries, max relative error {:.2e} at {}", report.checked, report.max_rel_error, report.worst_param);

    let config = AwdLstmConfig { bptt: 5, ..AwdLstmConfig::toy(50) };
    let mut lm = new_lm(config.clone(), 11)?;
    let ids: Vec<_> = lm.params.ids().collect();
    for id in ids {
        lm.params.get_mut(id).data.iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
    }
    let stream: Vec<TokenId> = (0..24).map(|_| 1 + rng.below(49) as TokenId).collect();
    let window = bptt_batches(&stream, 2, 5)?.remove(0);
    // A random carried-in state keeps every gradient well above round-off.
    let mut hidden = HiddenState::zeros(&config, 2);
    for (h, c) in &mut hidden.layers {
        h.data.iter_mut().chain(c.data.iter_mut()).for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
    }
    let noise = DropoutNoise::new(17);
    for mode in [Mode::Eval, Mode::Train] {
        let report = grad_check_stencil(
            &mut lm.params,
            |p, need| {
                let (l, g, _) = lm_loss(&config, p, &window, &hidden, mode, &mut noise.clone(), UnfreezeScope::All, need)
                    .expect("valid window");
                (l, g)
            },
            1e-2,
            Stencil::Six,
        );
        println!(
            "language model ({mode:?}): {} entries, max relative error {:.2e} at {}[{}], {}",
            report.checked,
            report.max_rel_error,
            report.worst_param,
            report.worst_index,
            if report.passes(1e-5, 1e-8) { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
