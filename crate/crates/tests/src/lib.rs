//! Holds the `acceptance` test target. It lives in its own package so a
//! failing criterion does not stop the other crates' tests from running.
