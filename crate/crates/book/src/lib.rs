//! Compiles and runs every Rust snippet of the guide in `book/src` as a
//! doc-test, so the book cannot drift from the library.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    plackett_luce => "plackett-luce.md",
    metrics => "metrics.md",
    estimators => "estimators.md",
    fairness => "fairness.md",
    oracle => "oracle.md",
    training => "training.md",
    cli => "cli.md",
}
