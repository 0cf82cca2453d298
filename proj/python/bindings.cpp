#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "eqflow/cli.hpp"
#include "eqflow/flow.hpp"
#include "eqflow/hypothesis.hpp"
#include "eqflow/perm_group.hpp"
#include "eqflow/verify.hpp"

namespace py = pybind11;
using namespace eqflow;

namespace {

// Reports cross the boundary as plain dicts via their JSON form.
py::object as_dict(const VerificationReport& r) {
  return py::module_::import("json").attr("loads")(to_json(r).dump());
}

Schedule make_schedule(const std::string& family, const std::vector<std::size_t>& dims,
                       const std::vector<Vector>& params, const std::string& activation, const std::string& integrator,
                       std::size_t steps_per_unit_time) {
  Schedule s;
  s.integrator = integrator_from_string(integrator);
  s.steps_per_unit_time = steps_per_unit_time;
  for (const auto& p : params)
    s.segments.push_back({ControlLayer(family_from_string(family), dims, p, activation_from_string(activation)), 1.0});
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_eqflow, m) {
  m.doc() = "Equivariant flows: permutation groups, control families, integrators and checkers";

  py::register_exception<FlowBlowUp>(m, "FlowBlowUp", PyExc_ArithmeticError);

  py::class_<Permutation>(m, "Permutation")
      .def(py::init(&Permutation::from_images), py::arg("images"))
      .def_static("identity", &Permutation::identity)
      .def_static("parse_cycles", &Permutation::parse_cycles, py::arg("n"), py::arg("text"))
      .def_static("transposition", &Permutation::transposition)
      .def_property_readonly("degree", &Permutation::degree)
      .def("images", &Permutation::images)
      .def("to_cycles", &Permutation::to_cycles)
      .def("__call__", &Permutation::operator())
      .def("__mul__", [](const Permutation& p, const Permutation& q) { return compose(p, q); })
      .def("inverse", [](const Permutation& p) { return inverse(p); })
      .def("act", [](const Permutation& p, const Vector& x) { return act_vector(p, x); })
      .def("__eq__", [](const Permutation& a, const Permutation& b) { return a == b; })
      .def("__hash__", [](const Permutation& p) { return py::hash(py::tuple(py::cast(p.images()))); })
      .def("__repr__", [](const Permutation& p) { return "Permutation('" + p.to_cycles() + "')"; });

  py::class_<PermGroup>(m, "PermGroup")
      .def(py::init(&parse_group), py::arg("record"))
      .def_property_readonly("degree", &PermGroup::degree)
      .def_property_readonly("descriptor", &PermGroup::descriptor)
      .def("__len__", &PermGroup::size)
      .def("__contains__", &PermGroup::contains)
      .def("elements", &PermGroup::elements)
      .def("stabilizer", [](const PermGroup& g, std::size_t i) { return stabilizer(g, i); })
      .def("right_transversal", [](const PermGroup& g) { return right_transversal(g).reps; })
      .def("__repr__", [](const PermGroup& g) { return "PermGroup('" + g.descriptor() + "')"; });

  py::class_<ControlLayer>(m, "ControlLayer")
      .def(py::init([](const std::string& family, std::vector<std::size_t> dims, Vector params,
                       const std::string& activation) {
             return ControlLayer(family_from_string(family), std::move(dims), std::move(params),
                                 activation_from_string(activation));
           }),
           py::arg("family"), py::arg("dims"), py::arg("params"), py::arg("activation") = "tanh")
      .def_static("parse", &ControlLayer::parse)
      .def("__call__", [](const ControlLayer& l, const Vector& x) { return l.eval(x); })
      .def_property_readonly("params", &ControlLayer::params)
      .def_property_readonly("declared_group", &ControlLayer::declared_group)
      .def("serialize", &ControlLayer::serialize);

  m.def("param_count", [](const std::string& family, const std::vector<std::size_t>& dims) {
    return param_count(family_from_string(family), dims);
  });
  m.def("families", [] {
    std::vector<std::string> out;
    for (Family f : all_families()) out.push_back(to_string(f));
    return out;
  });

  m.def(
      "integrate",
      [](const std::string& family, const std::vector<std::size_t>& dims, const std::vector<Vector>& params,
         const Vector& x, const std::string& activation, const std::string& integrator, std::size_t spu) {
        return integrate(make_schedule(family, dims, params, activation, integrator, spu), x).y;
      },
      py::arg("family"), py::arg("dims"), py::arg("params"), py::arg("x"), py::arg("activation") = "tanh",
      py::arg("integrator") = "euler", py::arg("steps_per_unit_time") = default_steps_per_unit_time,
      "Flow of unit-duration segments, one per parameter vector.");
  m.def(
      "inverse_integrate",
      [](const std::string& family, const std::vector<std::size_t>& dims, const std::vector<Vector>& params,
         const Vector& y, const std::string& activation, const std::string& integrator, std::size_t spu) {
        return inverse_integrate(make_schedule(family, dims, params, activation, integrator, spu), y);
      },
      py::arg("family"), py::arg("dims"), py::arg("params"), py::arg("y"), py::arg("activation") = "tanh",
      py::arg("integrator") = "euler", py::arg("steps_per_unit_time") = default_steps_per_unit_time);

  m.def(
      "target",
      [](const std::string& tag, const std::vector<std::size_t>& dims) {
        auto fn = register_targets().make(tag, dims).fn;
        return std::function<double(const Vector&)>([fn](const Vector& x) { return fn(x); });
      },
      py::arg("tag"), py::arg("dims"));

  m.def(
      "check_family_equivariance",
      [](const std::string& family, const std::vector<std::size_t>& dims, std::size_t samples, std::uint64_t seed) {
        return as_dict(check_family_equivariance(family_from_string(family), dims, samples, seed));
      },
      py::arg("family"), py::arg("dims"), py::arg("samples") = 200, py::arg("seed") = 0);
  m.def(
      "check_resolves",
      [](const std::string& family, const std::vector<std::size_t>& dims, const std::string& group,
         std::uint64_t seed) { return as_dict(check_resolves(family_from_string(family), dims, parse_group(group), seed)); },
      py::arg("family"), py::arg("dims"), py::arg("group"), py::arg("seed") = 0);
  m.def(
      "check_invariance",
      [](const std::function<double(const Vector&)>& fn, const std::string& group, std::size_t samples, double tol,
         std::uint64_t seed) {
        const ScalarMap wrapped = [&](std::span<const double> x) { return fn(Vector(x.begin(), x.end())); };
        return as_dict(check_invariance(wrapped, parse_group(group), samples, tol, seed));
      },
      py::arg("fn"), py::arg("group"), py::arg("samples") = 200, py::arg("tol") = 1e-12, py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"eqflow"};
        full.insert(full.end(), args.begin(), args.end());
        std::ostringstream out, err;
        const int code = cli::run(full, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
