pub mod attestation;
pub mod imager;
pub mod ltlmon;
pub mod machine;
pub mod monitor;
pub mod protocol;
pub mod scenario;
pub mod trace;
