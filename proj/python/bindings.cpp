#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kernatt/config.hpp"
#include "kernatt/verify.hpp"

namespace py = pybind11;
using namespace kernatt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(const Tensor& t) {
  if (!t.defined()) return py::array_t<double>();
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<int> default_positions(std::size_t n) {
  std::vector<int> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
  return p;
}

void tensor_property(py::class_<AttentionParams>& cls, const char* name,
                     Tensor AttentionParams::*member) {
  cls.def_property(
      name, [member](const AttentionParams& p) { return to_numpy(p.*member); },
      [member](AttentionParams& p, const Array& a) { p.*member = to_tensor(a); });
}

py::object json_loads(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

}  // namespace

PYBIND11_MODULE(_kernatt, m) {
  m.doc() = "Kernel-smoother attention core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InvalidKernelError>(m, "InvalidKernelError", PyExc_ArithmeticError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);

  py::enum_<KernelForm>(m, "KernelForm")
      .value("Linear", KernelForm::Linear)
      .value("Polynomial", KernelForm::Polynomial)
      .value("Exponential", KernelForm::Exponential)
      .value("RBF", KernelForm::RBF);
  py::enum_<PEMode>(m, "PEMode")
      .value("None_", PEMode::None)
      .value("DirectSum", PEMode::DirectSum)
      .value("LookupTable", PEMode::LookupTable)
      .value("XLProduct", PEMode::XLProduct)
      .value("SymmetricProduct", PEMode::SymmetricProduct);
  py::enum_<PETableKind>(m, "PETable")
      .value("Sinusoidal", PETableKind::Sinusoidal)
      .value("Learned", PETableKind::Learned);
  py::enum_<FilterKind>(m, "FilterKind")
      .value("Full", FilterKind::Full)
      .value("Causal", FilterKind::Causal)
      .value("CausalWithMemory", FilterKind::CausalWithMemory)
      .value("Strided", FilterKind::Strided);
  py::enum_<ValueMode>(m, "ValueMode")
      .value("WithPE", ValueMode::WithPE)
      .value("ContentOnly", ValueMode::ContentOnly);

  py::class_<FilterSpec>(m, "FilterSpec")
      .def(py::init<>())
      .def(py::init([](FilterKind kind) { return FilterSpec{kind}; }), py::arg("kind"))
      .def_readwrite("kind", &FilterSpec::kind)
      .def_readwrite("mem_len", &FilterSpec::mem_len)
      .def_readwrite("stride", &FilterSpec::stride)
      .def_readwrite("window", &FilterSpec::window)
      .def_readwrite("include_self", &FilterSpec::include_self);

  py::class_<AttentionConfig>(m, "AttentionConfig")
      .def(py::init([](std::size_t d_model, std::size_t d_k, std::size_t d_v, std::size_t heads) {
             AttentionConfig c;
             c.d_model = d_model;
             c.d_k = d_k;
             c.d_v = d_v ? d_v : d_k;
             c.n_heads = heads;
             return c;
           }),
           py::arg("d_model"), py::arg("d_k"), py::arg("d_v") = 0, py::arg("n_heads") = 1)
      .def_readwrite("d_model", &AttentionConfig::d_model)
      .def_readwrite("d_k", &AttentionConfig::d_k)
      .def_readwrite("d_v", &AttentionConfig::d_v)
      .def_readwrite("n_heads", &AttentionConfig::n_heads)
      .def_readwrite("kernel", &AttentionConfig::kernel)
      .def_readwrite("symmetric", &AttentionConfig::symmetric)
      .def_readwrite("filter", &AttentionConfig::filter)
      .def_readwrite("value", &AttentionConfig::value)
      .def_readwrite("eps", &AttentionConfig::eps)
      .def_readwrite("log_domain", &AttentionConfig::log_domain)
      .def_property(
          "pe_mode", [](const AttentionConfig& c) { return c.pe.mode; },
          [](AttentionConfig& c, PEMode v) { c.pe.mode = v; })
      .def_property(
          "pe_table", [](const AttentionConfig& c) { return c.pe.table; },
          [](AttentionConfig& c, PETableKind v) { c.pe.table = v; })
      .def_property(
          "t_max", [](const AttentionConfig& c) { return c.pe.t_max; },
          [](AttentionConfig& c, std::size_t v) { c.pe.t_max = v; })
      .def("validate", &AttentionConfig::validate);

  py::class_<AttentionParams> params(m, "AttentionParams");
  params.def_static(
      "init",
      [](const AttentionConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        return AttentionParams::init(cfg, rng);
      },
      py::arg("config"), py::arg("seed") = 0);
  params.def_property(
      "w_q", [](const AttentionParams& p) { return to_numpy(p.kernel.w_q); },
      [](AttentionParams& p, const Array& a) { p.kernel.w_q = to_tensor(a); });
  params.def_property(
      "w_k", [](const AttentionParams& p) { return to_numpy(p.kernel.w_k); },
      [](AttentionParams& p, const Array& a) { p.kernel.w_k = to_tensor(a); });
  tensor_property(params, "w_v", &AttentionParams::w_v);
  tensor_property(params, "w_o", &AttentionParams::w_o);
  params.def("names", [](AttentionParams& p) {
    std::vector<std::string> names;
    p.visit([&](const std::string& n, Tensor&) { names.push_back(n); });
    return names;
  });

  m.def(
      "attention_forward",
      [](const AttentionConfig& cfg, const AttentionParams& p, const Array& f_q,
         std::optional<Array> f_k, std::optional<std::vector<int>> pos_q,
         std::optional<std::vector<int>> pos_k) {
        auto q = to_tensor(f_q);
        auto k = f_k ? to_tensor(*f_k) : q;
        auto pq = pos_q.value_or(default_positions(q.dim(0)));
        auto pk = pos_k.value_or(default_positions(k.dim(0)));
        return to_numpy(attention_forward(cfg, p, q, k, pq, pk));
      },
      py::arg("config"), py::arg("params"), py::arg("f_q"), py::arg("f_k") = py::none(),
      py::arg("positions_q") = py::none(), py::arg("positions_k") = py::none(),
      "Kernel-smoother attention for one sequence; f_k defaults to f_q.");

  m.def(
      "attention_weights",
      [](const AttentionConfig& cfg, const AttentionParams& p, const Array& f) {
        auto x = to_tensor(f);
        auto pos = default_positions(x.dim(0));
        return to_numpy(attention_weights(cfg, p, x, x, pos, pos));
      },
      py::arg("config"), py::arg("params"), py::arg("f"),
      "Self-attention smoothing weights [heads x T x T].");

  m.def(
      "reference_softmax_attention",
      [](const AttentionParams& p, std::size_t heads, const Array& x_q,
         std::optional<Array> x_k) {
        auto q = to_tensor(x_q);
        auto k = x_k ? to_tensor(*x_k) : q;
        return to_numpy(reference_softmax_attention(p, heads, q, k));
      },
      py::arg("params"), py::arg("n_heads"), py::arg("x_q"), py::arg("x_k") = py::none());

  m.def(
      "build_mask",
      [](const FilterSpec& f, std::size_t tq, std::size_t tk) {
        auto mask = build_mask(f, tq, tk);
        py::array_t<bool> out({mask.rows, mask.cols});
        for (std::size_t i = 0; i < mask.bits.size(); ++i) out.mutable_data()[i] = mask.bits[i];
        return out;
      },
      py::arg("filter"), py::arg("tq"), py::arg("tk"));

  m.def(
      "sinusoidal_pe", [](std::size_t t, std::size_t d) { return to_numpy(sinusoidal_pe(t, d).values); },
      py::arg("t"), py::arg("d_model"));

  m.def("attention_param_count", &attention_param_count, py::arg("mode"), py::arg("symmetric"),
        py::arg("d_model"), py::arg("d_k"), py::arg("t_max") = 64,
        "Kernel-side attention parameters: projections and PE parameters.");

  m.def(
      "verify",
      [](const std::string& suite, std::uint64_t seed) {
        std::vector<VerifyReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_suite(suite, seed);
        }
        return json_loads(to_json(reports));
      },
      py::arg("suite") = "all", py::arg("seed") = 0);

  m.def(
      "load_config_text", [](const std::string& text) { return to_text(parse_config(text)); },
      py::arg("text"), "Parses config text and returns its canonical form.");

  m.def(
      "param_count",
      [](const std::string& text, std::uint64_t seed) {
        auto cfg = parse_config(text);
        return fresh_model(cfg.model, seed).param_count();
      },
      py::arg("config_text"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& text, std::optional<std::uint64_t> seed) {
        auto cfg = parse_config(text);
        if (seed) cfg.train.seed = *seed;
        std::ostringstream log;
        TrainResult result;
        Metrics test;
        {
          py::gil_scoped_release release;
          TaskData task(cfg.task);
          auto model = fresh_model(cfg.model, cfg.train.seed);
          result = train(model, task, cfg.train, &log);
          if (!result.diverged()) test = evaluate(model, task, Split::Test);
        }
        py::list records;
        std::istringstream lines(log.str());
        for (std::string line; std::getline(lines, line);) records.append(json_loads(line));
        py::dict out;
        out["status"] = to_string(result.status);
        out["steps_run"] = result.steps_run;
        out["log"] = records;
        if (!result.diverged()) {
          out["accuracy"] = test.accuracy;
          out["cross_entropy"] = test.cross_entropy;
          out["perplexity"] = test.perplexity;
        }
        return out;
      },
      py::arg("config_text"), py::arg("seed") = py::none(),
      "Trains a fresh model from config text (no corpus-relative paths).");
}
