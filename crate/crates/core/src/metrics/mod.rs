//! Evaluation metrics for detection, 6D pose and OCR.

pub mod detection;
pub mod ocr;
pub mod pose;
