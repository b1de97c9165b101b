use repcate::annotation::SamplingPolicy;
use repcate::dgp::{build_dataset, Benchmark, EncoderConfig};

/// Pearson chi-square statistic of a 2x2 table `[[a, b], [c, d]]`.
fn chi_square_2x2(t: [[f64; 2]; 2]) -> f64 {
    let n = t[0][0] + t[0][1] + t[1][0] + t[1][1];
    let rows = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
    let cols = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            stat += (t[i][j] - e).powi(2) / e;
        }
    }
    stat
}

/// Upper 1% point of chi-square with one degree of freedom.
const CHI2_1DF_99: f64 = 6.6349;

#[test]
fn chi_square_oracle_on_a_textbook_table() {
    // Independent table gives 0; [[10, 20], [30, 40]] gives 100/126 = 0.7937.
    assert!(chi_square_2x2([[10.0, 20.0], [30.0, 60.0]]).abs() < 1e-12);
    assert!((chi_square_2x2([[10.0, 20.0], [30.0, 40.0]]) - 0.793_650_793_650_8).abs() < 1e-9);
}

#[test]
fn random_annotation_is_independent_of_every_covariate() {
    for b in [Benchmark::Synsum, Benchmark::Mimic] {
        let names = b.layout().names;
        // Pooled S x covariate tables over 20 seeds; continuous covariates
        // are split at 0.5.
        let mut tables = vec![[[0.0f64; 2]; 2]; names.len()];
        for seed in 0..20u64 {
            let ds = build_dataset(b, 2000, &EncoderConfig::default(), 100 + seed).unwrap();
            let a = ds.annotate(&SamplingPolicy::random(600), seed).unwrap();
            for (r, &i) in a.records.iter().zip(&ds.split.train) {
                for (j, v) in ds.covariates[i].iter().enumerate() {
                    tables[j][r.s as usize][(*v > 0.5) as usize] += 1.0;
                }
            }
        }
        for (name, t) in names.iter().zip(&tables) {
            let stat = chi_square_2x2(*t);
            assert!(stat < CHI2_1DF_99, "{b:?} {name}: chi-square {stat:.3}");
        }
    }
}
