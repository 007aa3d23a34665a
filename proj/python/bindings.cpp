#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>

#include "xvfg/config_file.hpp"
#include "xvfg/gradcheck.hpp"
#include "xvfg/metrics.hpp"
#include "xvfg/parallel.hpp"
#include "xvfg/trainer.hpp"

namespace py = pybind11;
using namespace xvfg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-d array [N,C,H,W]");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  if (t.size() == 0) return Array(std::vector<py::ssize_t>{0});
  Array out({t.n(), t.c(), t.h(), t.w()});
  std::copy(t.ptr(), t.ptr() + t.size(), out.mutable_data());
  return out;
}

py::dict record_dict(const LossRecord& r) {
  py::dict d;
  d["iter"] = r.iter;
  d["d1"] = r.d1;
  d["d2"] = r.d2 ? py::object(py::float_(*r.d2)) : py::object(py::none());
  d["g_adv"] = r.g_adv;
  d["l1_stage1"] = r.l1_stage1;
  d["l1_stage2"] = r.l1_stage2;
  d["tv"] = r.tv;
  d["total"] = r.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("set_threads", &set_thread_count, py::arg("threads"));

  m.def(
      "psnr", [](const Array& a, const Array& b, double max_value) { return psnr(to_tensor(a), to_tensor(b), max_value); },
      py::arg("a"), py::arg("b"), py::arg("max_value") = 255.0);
  m.def(
      "ssim", [](const Array& a, const Array& b, double max_value) { return ssim(to_tensor(a), to_tensor(b), max_value); },
      py::arg("a"), py::arg("b"), py::arg("max_value") = 255.0);
  m.def(
      "kl_divergence",
      [](const std::vector<double>& p, const std::vector<double>& q) { return kl_divergence(p, q); }, py::arg("p"),
      py::arg("q"));

  m.def(
      "toy_pair",
      [](std::uint64_t seed, int size) {
        const PairedSample s = gen_toy_pair(seed, size);
        py::dict d;
        d["aerial"] = to_array(s.aerial);
        d["ground"] = to_array(s.ground);
        d["ground_semantic"] = to_array(s.ground_semantic);
        d["aerial_semantic"] = to_array(s.aerial_semantic);
        d["ground_label"] = s.ground_label;
        d["aerial_label"] = s.aerial_label;
        return d;
      },
      py::arg("seed"), py::arg("size") = 32);

  m.def(
      "gradcheck",
      [](const std::string& module, std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck(module, seed)) {
          py::dict d;
          d["module"] = r.module;
          d["op"] = r.op;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("module"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::map<std::string, std::string>& config, const std::string& data) {
        TrainConfig cfg;
        for (const auto& [k, v] : config) apply_config_key(cfg, k, v);
        cfg.validate();
        const auto samples = load_dataset(data, cfg.size, cfg.seed);
        std::vector<LossRecord> records;
        {
          py::gil_scoped_release release;
          records = train(cfg, samples).log;
        }
        py::list log;
        for (const auto& rec : records) log.append(record_dict(rec));
        return log;
      },
      py::arg("config") = std::map<std::string, std::string>{}, py::arg("data") = "toy",
      "Trains with config-file keys (all values as strings) and returns the loss log.");
}
