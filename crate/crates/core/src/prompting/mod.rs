//! Mosaic prompts, the meta-prompt template, response parsing, the
//! multimodal-model client, and text-to-condition keyword mapping.

pub mod client;
pub mod keywords;
pub mod parse;
pub mod prompt;
pub mod template;

pub use client::{request_meta_descriptions, request_with_credential, EndpointConfig};
pub use keywords::{condition_from_descriptions, describe_edit, describe_subject, Extracted};
pub use parse::{parse_meta_response, parse_meta_response_with_limit, MetaDescriptions};
pub use prompt::{build_mosaic_prompt, split_rendered, MosaicPrompt};
pub use template::{example_response, MetaPromptTemplate, SUMMARY_PREFIX};
