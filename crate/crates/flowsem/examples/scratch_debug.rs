use flowsem::analysis::{embedding_geometry, shared_twin, GeometryReport};
use flowsem::autodiff::AdamWConfig;
use flowsem::dataset::{synth_corpus, SynthSpec};
use flowsem::model::ModelConfig;
use flowsem::pretrain::{pretrain, PretrainConfig};
use flowsem::schema::{default_schema, ColumnSet};

fn extremes<'a>(geo: &GeometryReport, columns: &'a [String]) -> (&'a str, f64, &'a str, f64) {
    let mut min = (0usize, f64::INFINITY);
    let mut max = (0usize, f64::NEG_INFINITY);
    for (i, &v) in geo.intra_variance.iter().enumerate() {
        if v > 0.0 {
            if v < min.1 {
                min = (i, v);
            }
            if v > max.1 {
                max = (i, v);
            }
        }
    }
    (&columns[min.0], min.1, &columns[max.0], max.1)
}

fn main() {
    let schema = default_schema();
    let columns: Vec<String> = schema
        .column_names(ColumnSet::Generalizable)
        .iter()
        .map(|s| s.to_string())
        .collect();

    // C6: geometry ordering over seeds.
    let data = synth_corpus(&SynthSpec::two_class(), 200, 7, &schema, ColumnSet::Generalizable, 10, 11)
        .unwrap()
        .dataset;
    for seed in [1u64, 2, 3] {
        let base = ModelConfig { dim: 32, layers: 1, heads: 4, ..ModelConfig::default() };
        let pcfg = PretrainConfig {
            epochs: 20,
            batch_size: 48,
            seed,
            p_field: 0.4,
            p_packet: 0.05,
            optim: AdamWConfig { lr: 3e-3, ..AdamWConfig::default() },
            ..PretrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let result = pretrain(&data, &schema, &base, &pcfg).unwrap();
        let geo = embedding_geometry(&result.model, &data, 2000, &columns).unwrap();
        let tgeo = embedding_geometry(&shared_twin(&result.model), &data, 2000, &columns).unwrap();
        println!(
            "geometry seed {seed}: fsu {:.1} shared {:.1} ({:.0}s)",
            geo.variance_ratio,
            tgeo.variance_ratio,
            t0.elapsed().as_secs_f32()
        );
        let (fmin_n, fmin, fmax_n, fmax) = extremes(&geo, &columns);
        let (smin_n, smin, smax_n, smax) = extremes(&tgeo, &columns);
        println!("  fsu    min {fmin_n}={fmin:.2e} max {fmax_n}={fmax:.2e}");
        println!("  shared min {smin_n}={smin:.2e} max {smax_n}={smax:.2e}");
    }

    // C5: filtering-off random-column loss explosion.
    let data = synth_corpus(
        &SynthSpec::two_class(),
        160,
        9,
        &schema,
        ColumnSet::GeneralizableAndRandom,
        10,
        11,
    )
    .unwrap()
    .dataset;
    let base = ModelConfig { dim: 24, layers: 1, heads: 4, ..ModelConfig::default() };
    let pcfg = PretrainConfig {
        epochs: 18,
        batch_size: 48,
        seed: 4,
        no_filter: true,
        optim: AdamWConfig { lr: 3e-3, ..AdamWConfig::default() },
        ..PretrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let result = pretrain(&data, &schema, &base, &pcfg).unwrap();
    let gen: std::collections::HashSet<&str> =
        schema.column_names(ColumnSet::Generalizable).into_iter().collect();
    let mut gl: Vec<f64> = result
        .per_fsu
        .iter()
        .filter(|r| gen.contains(r.name.as_str()) && r.count > 0)
        .map(|r| r.mse)
        .collect();
    gl.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = gl[gl.len() / 2];
    let ip_id = result.per_fsu.iter().find(|r| r.name == "ip.id").unwrap().mse;
    println!(
        "no_filter e18: ip.id {:.5} median_gen {:.6} ratio {:.1} ({:.0}s)",
        ip_id,
        median,
        ip_id / median,
        t0.elapsed().as_secs_f32()
    );
}
