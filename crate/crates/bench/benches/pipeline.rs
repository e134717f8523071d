use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use capnet_core::decode::beam_search;
use capnet_core::metrics::sentence_bleu;
use capnet_core::model::{backward, forward_caption, Dims, ModelParams};
use capnet_core::numeric::Vector;
use capnet_core::vocab::{tokenize, START_ID, STOP_ID};

fn bench_forward_backward(c: &mut Criterion) {
    let dims = Dims {
        d: 64,
        e: 64,
        h: 64,
        v: 100,
    };
    let params = ModelParams::init(dims, 1);
    let feature = Vector::new((0..dims.d).map(|i| (i as f64 * 0.37).sin()).collect());
    let ids = vec![START_ID, 5, 9, 3, 17, 42, 8, STOP_ID];

    c.bench_function("forward_caption", |b| {
        b.iter(|| forward_caption(&params, &feature, &ids).unwrap().loss)
    });
    c.bench_function("forward_backward", |b| {
        b.iter(|| {
            let trace = forward_caption(&params, &feature, &ids).unwrap();
            backward(&params, &trace).unwrap()
        })
    });
}

fn bench_beam_search(c: &mut Criterion) {
    let dims = Dims {
        d: 32,
        e: 32,
        h: 32,
        v: 50,
    };
    let params = ModelParams::init(dims, 2);
    let feature = Vector::new((0..dims.d).map(|i| (i as f64 * 0.11).cos()).collect());
    let mut group = c.benchmark_group("beam_search");
    for k in [1usize, 3, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| beam_search(&params, &feature, k, 12).unwrap())
        });
    }
    group.finish();
}

fn bench_bleu(c: &mut Criterion) {
    let cand = tokenize("a woman sitting at a table with a plate of food");
    let refs: Vec<Vec<String>> = [
        "the young woman is seated at the table for lunch holding a hotdog",
        "a woman is eatting a hotdog at a wooden table",
        "there is a woman holding food at a table",
        "a young woman holding a sandwich at a table",
        "a woman that is sitting down holding a hotdog",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect();
    c.bench_function("sentence_bleu", |b| {
        b.iter(|| sentence_bleu(&cand, &refs, 4).unwrap())
    });
}

criterion_group!(benches, bench_forward_backward, bench_beam_search, bench_bleu);
criterion_main!(benches);
