use lockhound::generator::{generate, GenOpts};
use lockhound::oracle::{check_must, check_nonconc, check_may_covers_held, check_deadlocks_reported, explore, OracleOpts};
use lockhound::pipeline::{analyze, Config};

fn seeds() -> u64 {
    std::env::var("LOCKHOUND_SEEDS").ok().and_then(|s| s.parse().ok()).unwrap_or(40)
}

#[test]
fn generated_programs_agree_with_oracle() {
    let gen = GenOpts::default();
    let first = std::env::var("LOCKHOUND_FIRST").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    for seed in first..first + seeds() {
        let src = generate(seed, &gen);
        let a = analyze(&src, &Config::default()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let ex = explore(&a.model, &OracleOpts::default());
        assert_eq!(ex.place_mismatches, 0, "seed {seed}");
        let ctx = |r: Result<(), lockhound::oracle::Violation>| r.unwrap_or_else(|v| panic!("seed {seed}: {v:?}\n{src}"));
        ctx(check_may_covers_held(&a, &ex));
        ctx(check_must(&a, &ex));
        ctx(check_deadlocks_reported(&a, &ex));
        ctx(check_nonconc(&a, &ex, 200, seed).map(|_| ()));
    }
}
