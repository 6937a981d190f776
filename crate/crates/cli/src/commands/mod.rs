pub mod aggregate;
pub mod compare;
pub mod evaluate;
pub mod grade;
pub mod tune;
