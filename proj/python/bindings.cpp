#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mixdiff/diffusion.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/fidelity.hpp"
#include "mixdiff/pipeline.hpp"
#include "mixdiff/privacy.hpp"
#include "mixdiff/schema.hpp"
#include "mixdiff/structure.hpp"
#include "mixdiff/utility.hpp"

namespace py = pybind11;
using namespace mixdiff;

namespace {

Tensor as_tensor(const std::vector<double>& v) {
    Tensor t({1, 1, 1, v.size()});
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

std::vector<double> as_vector(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

NoiseSchedule schedule_of(std::size_t T, double beta_min, double beta_max) {
    return build_schedule(T, beta_min, beta_max);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "mixdiff core bindings";

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
    error_type.call_once_and_store_result([&] { return py::exception<Error>(m, "MixdiffError"); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error_type.get_stored(), (e.kind() + ": " + e.what()).c_str());
        }
    });

    m.def("schema_width", [](const std::string& schema_json) {
        return DatasetSchema::from_json(nlohmann::json::parse(schema_json)).width();
    });
    m.def("load_schema_json", [](const std::filesystem::path& p) { return DatasetSchema::load(p).to_json().dump(); });

    m.def("schedule", [](std::size_t T, double beta_min, double beta_max) {
        const auto s = schedule_of(T, beta_min, beta_max);
        return py::make_tuple(s.betas(), s.alpha_bars());
    }, py::arg("T"), py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.01);

    m.def("q_sample", [](const std::vector<double>& x0, std::size_t t, const std::vector<double>& eps, std::size_t T,
                         double beta_min, double beta_max) {
        return as_vector(q_sample(as_tensor(x0), t, as_tensor(eps), schedule_of(T, beta_min, beta_max)));
    }, py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("T"), py::arg("beta_min") = 1e-4,
       py::arg("beta_max") = 0.01);

    m.def("one_step_reconstruct", [](const std::vector<double>& xt, std::size_t t, const std::vector<double>& eps,
                                     std::size_t T, double beta_min, double beta_max) {
        return as_vector(one_step_reconstruct(as_tensor(xt), t, as_tensor(eps), schedule_of(T, beta_min, beta_max)));
    }, py::arg("xt"), py::arg("t"), py::arg("eps"), py::arg("T"), py::arg("beta_min") = 1e-4,
       py::arg("beta_max") = 0.01);

    m.def("kendall_tau", [](const std::vector<double>& a, const std::vector<double>& b) { return kendall_tau(a, b); });
    m.def("ks_statistic", [](const std::vector<double>& a, const std::vector<double>& b) { return ks_statistic(a, b); });
    m.def("ks_test", [](const std::vector<double>& a, const std::vector<double>& b, double alpha) {
        const auto r = ks_test(a, b, alpha);
        return py::make_tuple(r.statistic, r.p_value, r.pass);
    }, py::arg("a"), py::arg("b"), py::arg("alpha") = 0.05);
    m.def("linear_trend", [](const std::vector<double>& y) { return linear_trend(y); });
    m.def("log_cluster_from_assignment", [](const std::vector<std::size_t>& labels, const std::vector<bool>& is_real,
                                            std::size_t gamma) {
        return log_cluster_from_assignment(labels, is_real, gamma).value;
    });
    m.def("disclosure_risk", [](const std::vector<std::vector<std::string>>& real,
                                const std::vector<std::vector<std::string>>& syn) {
        return disclosure_risk(real, syn).risk;
    });
    m.def("min_euclidean_distance", [](const std::vector<std::vector<double>>& real,
                                       const std::vector<std::vector<double>>& syn) {
        return min_euclidean_distance(real, syn);
    });
    m.attr("DISCLOSURE_THRESHOLD") = kDisclosureThreshold;

    m.def("run_command", [](const std::string& name, const std::filesystem::path& config, std::optional<std::uint64_t> seed,
                            std::optional<std::filesystem::path> out, bool plots, int verbosity) {
        RunConfig::Overrides o;
        o.seed = seed;
        o.output_dir = out;
        if (plots) o.plots = true;
        o.verbosity = verbosity;
        const auto cfg = RunConfig::load(config, o);
        py::gil_scoped_release release;
        return run_command(name, cfg).dump();
    }, py::arg("name"), py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
       py::arg("plots") = false, py::arg("verbosity") = 0);
}
