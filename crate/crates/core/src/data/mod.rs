//! Market panels, industry membership, sample windows and the synthetic
//! market generator.

mod ingest;
mod panel;
mod samples;
mod synth;

pub use ingest::{
    ingest_csv, read_industries, read_prices, write_industries, write_prices, Alignment,
};
pub use panel::{compute_return, IndustryIncidence, MarketPanel, CLOSE, INDICATORS, VOLUME};
pub use samples::{make_samples, usable_samples, Normalizer, Sample, SampleRef, Scaling, SplitSpec, Splits};
pub use synth::{business_days, synthesize_market, LeadLagLink, SynthSpec, SyntheticMarket};
