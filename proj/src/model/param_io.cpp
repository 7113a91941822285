#include "egoface/model/param_io.hpp"

#include <stdexcept>
#include <vector>

namespace egoface::model {

namespace {

nlohmann::json to_array(const Eigen::VectorXd& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

VectorXd from_array(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw std::invalid_argument(std::string("parameter record lacks array '") + key + "'");
    }
    const auto values = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace

nlohmann::json param_to_json(const ParamVector& p)
{
    return {{"R", to_array(p.R)},         {"T", to_array(p.T)},         {"alpha", to_array(p.alpha)},
            {"beta", to_array(p.beta)},   {"delta", to_array(p.delta)}, {"gamma", to_array(p.gamma)}};
}

ParamVector param_from_json(const nlohmann::json& j)
{
    ParamVector p;
    const VectorXd r = from_array(j, "R"), t = from_array(j, "T");
    if (r.size() != 3 || t.size() != 3) {
        throw std::invalid_argument("R and T need three entries");
    }
    p.R = r;
    p.T = t;
    p.alpha = from_array(j, "alpha");
    p.beta = from_array(j, "beta");
    p.delta = from_array(j, "delta");
    p.gamma = from_array(j, "gamma");
    return p;
}

} // namespace egoface::model
