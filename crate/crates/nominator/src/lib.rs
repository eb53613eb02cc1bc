//! IO, file formats, parallel execution and the command-line front end for
//! DOM element nomination.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod html;
pub mod page_json;
pub mod parallel;
pub mod report;
