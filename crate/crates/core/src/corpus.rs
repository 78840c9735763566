//! Bundled example programs. Each one evaluates to its main closure;
//! the driver wraps that closure in a coroutine and resumes it.

pub const INC: &str = include_str!("../programs/inc.sexp");
pub const COUNT: &str = include_str!("../programs/count.sexp");
pub const FACTORIAL: &str = include_str!("../programs/factorial.sexp");
pub const FIBONACCI: &str = include_str!("../programs/fibonacci.sexp");
pub const MYPRINT: &str = include_str!("../programs/myprint.sexp");
pub const WRITER: &str = include_str!("../programs/writer.sexp");
pub const KNN_LITE: &str = include_str!("../programs/knn_lite.sexp");

pub const ALL: &[(&str, &str)] = &[
    ("inc.sexp", INC),
    ("count.sexp", COUNT),
    ("factorial.sexp", FACTORIAL),
    ("fibonacci.sexp", FIBONACCI),
    ("myprint.sexp", MYPRINT),
    ("writer.sexp", WRITER),
    ("knn_lite.sexp", KNN_LITE),
];

/// Look a bundled program up by file name or bare name.
pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter()
        .find(|(n, _)| *n == name || n.trim_end_matches(".sexp") == name)
        .map(|(_, text)| *text)
}
