#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phytnet/metrics.hpp"
#include "phytnet/model.hpp"
#include "phytnet/sweep.hpp"

namespace py = pybind11;
using namespace phytnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray& a, bool requires_grad = false) {
  std::vector<int> shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<float> values(a.data(), a.data() + a.size());
  return Tensor::from_vector(std::move(shape), std::move(values), requires_grad);
}

py::array_t<float> array_from(const std::vector<int>& shape,
                              const std::vector<float>& values) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<float> out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::array_t<float> array_from(const Tensor& t) { return array_from(t.shape(), t.data()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native kernels and counters behind the phytnet toolkit";
  m.attr("__version__") = "0.1.0";

  m.def(
      "conv2d",
      [](const FloatArray& x, const FloatArray& w, py::object b, int stride,
         int padding) {
        Tensor bias;  // stays undefined for bias-free convolution
        if (!b.is_none()) bias = tensor_from(b.cast<FloatArray>());
        return array_from(conv2d(tensor_from(x), tensor_from(w), bias, stride, padding));
      },
      py::arg("x"), py::arg("w"), py::arg("b") = py::none(), py::arg("stride") = 1,
      py::arg("padding") = 0,
      "2-D convolution over [N,C,H,W] input with [O,C,kh,kw] weights");

  m.def(
      "group_norm",
      [](const FloatArray& x, int groups, const FloatArray& gamma,
         const FloatArray& beta, float eps) {
        return array_from(
            group_norm(tensor_from(x), groups, tensor_from(gamma), tensor_from(beta), eps));
      },
      py::arg("x"), py::arg("groups"), py::arg("gamma"), py::arg("beta"),
      py::arg("eps") = 1e-5f);

  m.def("relu", [](const FloatArray& x) { return array_from(relu(tensor_from(x))); });
  m.def("gelu", [](const FloatArray& x) { return array_from(gelu(tensor_from(x))); });
  m.def("sigmoid",
        [](const FloatArray& x) { return array_from(sigmoid(tensor_from(x))); });

  m.def(
      "softmax_cross_entropy",
      [](const FloatArray& logits, const std::vector<int>& labels) {
        return softmax_cross_entropy(tensor_from(logits), labels).item();
      },
      py::arg("logits"), py::arg("labels"),
      "Mean cross-entropy of row-wise softmax against integer labels");

  m.def(
      "softmax_cross_entropy_grad",
      [](const FloatArray& logits, const std::vector<int>& labels) {
        Tensor t = tensor_from(logits, /*requires_grad=*/true);
        Tensor loss = softmax_cross_entropy(t, labels);
        loss.backward();
        return array_from(t.shape(), t.grad());
      },
      py::arg("logits"), py::arg("labels"),
      "Gradient of the mean cross-entropy with respect to the logits");

  m.def(
      "predict_class",
      [](const FloatArray& logits, int num_classes) {
        return predict_class(tensor_from(logits), num_classes);
      },
      py::arg("logits"), py::arg("num_classes"),
      "Restricted argmax over the first num_classes logits per row");

  m.def(
      "phytnet_cost",
      [](const std::string& config_json, int input_size) {
        const ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(config_json));
        PhytNetModel model(cfg, 0);
        const CostReport r =
            cost_report(model, input_size > 0 ? input_size : cfg.input_size);
        return py::make_tuple(r.n_params, r.gflops);
      },
      py::arg("config_json"), py::arg("input_size") = 0,
      "(n_params, gflops) for a model config JSON string");

  m.def(
      "resnet18_cost",
      [](int num_classes, int input_size) {
        ResNet18Model model(num_classes);
        const CostReport r = cost_report(model, input_size);
        return py::make_tuple(r.n_params, r.gflops);
      },
      py::arg("num_classes") = 4, py::arg("input_size") = 408,
      "(n_params, gflops) of the 18-layer residual reference");

  m.def(
      "gate",
      [](int64_t n_params, double gflops) {
        const GateVerdict v = gate_verdict(n_params, gflops);
        return py::make_tuple(v.pass, v.reasons);
      },
      py::arg("n_params"), py::arg("gflops"),
      "(pass, reasons) under the 2M-parameter / 6-GFLOP pre-training gate");

  m.def("expected_improvement", &expected_improvement, py::arg("mu"),
        py::arg("sigma"), py::arg("best"));

  m.def(
      "derive_seed",
      [](uint64_t base, const std::string& tag, const std::vector<uint64_t>& words) {
        const uint64_t tagged = derive_seed(base, tag);
        if (words.empty()) return tagged;
        return derive_seed_span(tagged, words.data(), words.size());
      },
      py::arg("base"), py::arg("tag"), py::arg("words") = std::vector<uint64_t>{},
      "Deterministic child seed for a named random stream");
}
