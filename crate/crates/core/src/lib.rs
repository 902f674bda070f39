//! Pediatric ocular age estimation on synthetic NIR eye imagery.
//!
//! The crate covers the whole pipeline: a synthetic two-sensor eye renderer
//! and manifest handling ([`dataman`]), iris localization and rubber-sheet
//! normalization ([`preproc`]), a small CNN engine ([`nnet`]), multi-task
//! training ([`multitask`]) and evaluation reports with saliency ([`eval`]).

pub mod dataman;
pub mod eval;
pub mod multitask;
pub mod nnet;
pub mod par;
pub mod preproc;
