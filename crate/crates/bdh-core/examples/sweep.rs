use bdh_core::model::{init_params, ModelConfig};
use bdh_core::train::{make_repetition_stream, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args[1].parse().unwrap();
    let gamma: f32 = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let lr_final: f64 = args[4].parse().unwrap();
    let seq: usize = args[5].parse().unwrap();
    let batch: usize = args[6].parse().unwrap();
    let steps: usize = args[7].parse().unwrap();
    let wave_max: f32 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(n as f32);

    let c = ModelConfig {
        n, d: 64, layers: 4, heads: 2, vocab_size: 26, dropout: 0.0,
        rope_wavelength_range: (1.0, wave_max), alibi_gamma: gamma, eps: 1e-5,
    };
    let params = init_params(&c, 1).unwrap();
    let cfg = TrainConfig {
        lr_peak: lr, warmup_steps: 150, lr_final, weight_decay: 0.1,
        clip_norm: 1.0, seq_len: seq, batch_size: batch, steps,
        detach_attention: false, seed: 10,
    };
    let t0 = std::time::Instant::now();
    let (_, metrics) = train(params, &mut |b| {
        Box::new(make_repetition_stream(13, 8, 8, 26, 100 + b))
    }, &cfg).unwrap();
    for (i, s) in metrics.steps.iter().enumerate() {
        if i % 250 == 0 || i == steps - 1 {
            println!("step {:5} loss {:.4}", s.step, s.loss);
        }
    }
    println!("elapsed {:.0}s", t0.elapsed().as_secs_f32());
}
