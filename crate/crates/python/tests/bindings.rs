use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(cocycle_lab_py::cocycle_lab_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("cl", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        py.run(&code, Some(&globals), None).unwrap_or_else(|e| panic!("{e}"));
    });
}

#[test]
fn symbolic_points_and_shifts() {
    with_module(
        "q = cl.SymbolicPoint.periodic([0])\n\
         assert q.period() == 1 and q.symbol(-5) == 0\n\
         x = cl.SymbolicPoint(str(q))\n\
         assert x == q\n\
         s = cl.Shift.full(2, 0.5)\n\
         assert s.count_orbits(4) == 2 + 1 + 2 + 3\n\
         assert cl.Shift.golden_mean(0.5).count_orbits(4) == 1 + 1 + 1 + 1\n\
         assert all(s.distance(h.shift(12), q) < 1e-3 for h in s.homoclinic_points(q, 2))\n",
    );
}

#[test]
fn automorphisms_and_conjugacy() {
    with_module(
        "a = cl.ToralAutomorphism([[2, 1], [1, 1]])\n\
         b = cl.ToralAutomorphism([[3, 1], [2, 1]])\n\
         assert a.weakly_irreducible() and a.block_sum(a).weakly_irreducible()\n\
         assert not a.block_sum(b).weakly_irreducible()\n\
         assert a.fixed_point_count(2) == 5 and len(a.fixed_points(2)) == 5\n\
         h = cl.Conjugacy(a, [('sin', [0.01, 0.0], [1, 0])], 16)\n\
         assert h.residual < 1e-9 and h.defect([0.1, 0.2]) < 1e-9\n\
         try:\n    cl.Conjugacy(a, [('tan', [0.01, 0.0], [1, 0])], 8)\n    raise AssertionError('bad kind accepted')\n\
         except ValueError:\n    pass\n",
    );
}

#[test]
fn scenarios_and_bunching() {
    with_module(
        "import json\n\
         f, s, ok = cl.bunching(0.2, 0.9, 1.2, 0.5)\n\
         assert not ok and s > 1\n\
         r = json.loads(cl.run_gallery('coprime-combine'))\n\
         assert r['schema'] == cl.SCHEMA and r['passed']\n\
         r = json.loads(cl.run_config(cl.gallery_config('weak-irreducibility'), seed=3))\n\
         assert r['scenario']['seed'] == 3\n\
         try:\n    cl.run_config('scenario = weak-irreducibility\\n[maps]\\na = [[1, 2]]\\n')\n    raise AssertionError('bad matrix accepted')\n\
         except ValueError as e:\n    assert 'maps.a' in str(e)\n",
    );
}
