#include "nlgrowth/fitfile.hpp"

#include "nlgrowth/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace nlgrowth {

namespace {

using Json = nlohmann::ordered_json;

std::string u64_hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::uint64_t hex_u64(const std::string& s) { return std::stoull(s, nullptr, 16); }

// JSON has no NaN/Inf literal; map non-finite values through null
Json jnum(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
double num_or_nan(const Json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Json form_to_json(const FunctionalForm& f) {
    return Json{{"kind", curve_kind_name(f.kind)}, {"intrinsic", f.intrinsic}};
}

FunctionalForm form_from_json(const Json& j) {
    FunctionalForm f;
    f.kind = curve_kind_from_name(j.at("kind").get<std::string>());
    f.intrinsic = j.at("intrinsic").get<bool>();
    return f;
}

} // namespace

Json spec_to_json(const ModelSpec& s) {
    Json j;
    j["family"] = family_name(s.family);
    j["form"] = form_to_json(s.form);
    j["outcome"] = s.outcome;
    j["tic_names"] = s.tic_names;
    if (s.tvc) {
        j["tvc"] = Json{{"var", s.tvc->var},
                        {"type", s.tvc->type},
                        {"base_model", family_name(s.tvc->base_model)}};
    }
    if (s.mgm) {
        j["mgm"] = Json{{"outcomes", s.mgm->outcomes},
                        {"base_model", family_name(s.mgm->base_model)}};
    }
    if (s.mediation) {
        j["mediation"] = Json{{"x_var", s.mediation->x_var},
                              {"m_var", s.mediation->m_var},
                              {"y_var", s.mediation->y_var},
                              {"x_longitudinal", s.mediation->x_longitudinal},
                              {"disabled_paths", s.mediation->disabled_paths}};
    }
    if (s.mixture) {
        j["mixture"] = Json{{"n_classes", s.mixture->n_classes},
                            {"sub_family", family_name(s.mixture->sub_family)},
                            {"class_tic_names", s.mixture->class_tic_names},
                            {"tie_names", s.mixture->tie_names}};
    }
    return j;
}

ModelSpec spec_from_json(const Json& j) {
    ModelSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.form = form_from_json(j.at("form"));
    s.outcome = j.at("outcome").get<std::string>();
    s.tic_names = j.at("tic_names").get<std::vector<std::string>>();
    if (j.contains("tvc")) {
        TvcSpec t;
        t.var = j["tvc"].at("var").get<std::string>();
        t.type = j["tvc"].at("type").get<int>();
        t.base_model = family_from_name(j["tvc"].at("base_model").get<std::string>());
        s.tvc = t;
    }
    if (j.contains("mgm")) {
        MgmSpec m;
        m.outcomes = j["mgm"].at("outcomes").get<std::vector<std::string>>();
        m.base_model = family_from_name(j["mgm"].at("base_model").get<std::string>());
        s.mgm = m;
    }
    if (j.contains("mediation")) {
        MediationSpec m;
        m.x_var = j["mediation"].at("x_var").get<std::string>();
        m.m_var = j["mediation"].at("m_var").get<std::string>();
        m.y_var = j["mediation"].at("y_var").get<std::string>();
        m.x_longitudinal = j["mediation"].at("x_longitudinal").get<bool>();
        m.disabled_paths = j["mediation"].at("disabled_paths").get<std::vector<std::string>>();
        s.mediation = m;
    }
    if (j.contains("mixture")) {
        MixtureSpec m;
        m.n_classes = j["mixture"].at("n_classes").get<int>();
        m.sub_family = family_from_name(j["mixture"].at("sub_family").get<std::string>());
        m.class_tic_names = j["mixture"].at("class_tic_names").get<std::vector<std::string>>();
        m.tie_names = j["mixture"].at("tie_names").get<std::vector<std::string>>();
        s.mixture = m;
    }
    return s;
}

Json roles_to_json(const ColumnRoles& r) {
    Json j;
    Json lv = Json::array();
    for (const auto& v : r.longitudinal)
        lv.push_back(Json{{"name", v.name},
                          {"value_cols", v.value_cols},
                          {"time_cols", v.time_cols},
                          {"waves", v.waves}});
    j["longitudinal"] = lv;
    j["tic_cols"] = r.tic_cols;
    j["class_tic_cols"] = r.class_tic_cols;
    j["id_col"] = r.id_col;
    return j;
}

ColumnRoles roles_from_json(const Json& j) {
    ColumnRoles r;
    for (const auto& v : j.at("longitudinal")) {
        LongitudinalVar lv;
        lv.name = v.at("name").get<std::string>();
        lv.value_cols = v.at("value_cols").get<std::vector<std::string>>();
        lv.time_cols = v.at("time_cols").get<std::vector<std::string>>();
        lv.waves = v.at("waves").get<std::vector<int>>();
        r.longitudinal.push_back(std::move(lv));
    }
    r.tic_cols = j.at("tic_cols").get<std::vector<std::string>>();
    r.class_tic_cols = j.at("class_tic_cols").get<std::vector<std::string>>();
    r.id_col = j.at("id_col").get<std::string>();
    return r;
}

void save_fit(const FitResult& fit, const DerivedParamTable& derived, const std::string& path) {
    Json j;
    j["schema"] = "nlgrowth-fit/1";
    j["spec"] = spec_to_json(fit.spec);
    j["roles"] = roles_to_json(fit.roles);
    j["n_individuals"] = fit.n_individuals;
    j["n_parameters"] = fit.n_parameters;
    j["minus2ll"] = jnum(fit.minus_two_log_lik);
    j["status"] = fit.status;
    Json internal = Json::array();
    for (std::size_t i = 0; i < fit.internal_names.size(); ++i)
        internal.push_back(Json::array({fit.internal_names[i], fit.internal_estimates[static_cast<Eigen::Index>(i)]}));
    j["internal"] = internal;
    Json user = Json::array();
    for (std::size_t i = 0; i < fit.user_names.size(); ++i) {
        Json row = Json::array({fit.user_names[i], fit.user_estimates[static_cast<Eigen::Index>(i)]});
        if (fit.user_se)
            row.push_back((*fit.user_se)[static_cast<Eigen::Index>(i)]);
        else
            row.push_back(nullptr);
        user.push_back(row);
    }
    j["user"] = user;
    if (fit.user_vcov) {
        Json v = Json::array();
        for (Eigen::Index r = 0; r < fit.user_vcov->rows(); ++r) {
            Json row = Json::array();
            for (Eigen::Index c = 0; c < fit.user_vcov->cols(); ++c) row.push_back((*fit.user_vcov)(r, c));
            v.push_back(row);
        }
        j["vcov_user"] = v;
    }
    Json att = Json::array();
    for (const auto& a : fit.attempts)
        att.push_back(Json::array({u64_hex(a.start_hash), jnum(a.final_value), a.status, a.iterations}));
    j["attempts"] = att;
    j["data_fingerprint"] = u64_hex(fit.data_fingerprint);
    Json der = Json::array();
    for (const auto& d : derived.rows) der.push_back(Json::array({d.name, jnum(d.estimate), jnum(d.se)}));
    j["derived"] = der;

    std::ofstream out(path);
    if (!out) throw Error("cannot open fit file for writing: " + path);
    out << j.dump(1) << '\n';
}

LoadedFit load_fit(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open fit file: " + path);
    Json j;
    in >> j;
    if (j.value("schema", "") != "nlgrowth-fit/1")
        throw Error("file '" + path + "' is not an nlgrowth fit file (schema tag mismatch)");
    LoadedFit lf;
    FitResult& f = lf.fit;
    f.spec = spec_from_json(j.at("spec"));
    f.roles = roles_from_json(j.at("roles"));
    f.n_individuals = j.at("n_individuals").get<int>();
    f.n_parameters = j.at("n_parameters").get<int>();
    f.minus_two_log_lik = num_or_nan(j.at("minus2ll"));
    f.status = j.at("status").get<int>();
    const auto& internal = j.at("internal");
    f.internal_estimates.resize(static_cast<Eigen::Index>(internal.size()));
    for (std::size_t i = 0; i < internal.size(); ++i) {
        f.internal_names.push_back(internal[i][0].get<std::string>());
        f.internal_estimates[static_cast<Eigen::Index>(i)] = internal[i][1].get<double>();
    }
    const auto& user = j.at("user");
    f.user_estimates.resize(static_cast<Eigen::Index>(user.size()));
    Eigen::VectorXd se(static_cast<Eigen::Index>(user.size()));
    bool has_se = true;
    for (std::size_t i = 0; i < user.size(); ++i) {
        f.user_names.push_back(user[i][0].get<std::string>());
        f.user_estimates[static_cast<Eigen::Index>(i)] = user[i][1].get<double>();
        if (user[i][2].is_null())
            has_se = false;
        else
            se[static_cast<Eigen::Index>(i)] = user[i][2].get<double>();
    }
    if (has_se && user.size() > 0) f.user_se = se;
    if (j.contains("vcov_user")) {
        const auto& v = j["vcov_user"];
        Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v.size()));
        for (std::size_t r = 0; r < v.size(); ++r)
            for (std::size_t c = 0; c < v[r].size(); ++c)
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c].get<double>();
        f.user_vcov = m;
    }
    for (const auto& a : j.at("attempts"))
        f.attempts.push_back({hex_u64(a[0].get<std::string>()), num_or_nan(a[1]), a[2].get<int>(),
                              a[3].get<int>()});
    f.data_fingerprint = hex_u64(j.at("data_fingerprint").get<std::string>());
    for (const auto& d : j.at("derived"))
        lf.derived.rows.push_back({d[0].get<std::string>(), num_or_nan(d[1]), num_or_nan(d[2])});
    return lf;
}

} // namespace nlgrowth
