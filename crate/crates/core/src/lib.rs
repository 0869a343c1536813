pub mod cases;
pub mod clock;
pub mod diagnosis;
pub mod dialogue;
pub mod evaluation;
pub mod exams;
pub mod gateway;
pub mod ids;
pub mod kb;
pub mod prescription;
pub mod platform;
