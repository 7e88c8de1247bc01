#pragma once

#include <stdexcept>
#include <string>

namespace nlgrowth {

// Base class for all library errors so callers can catch one type.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- dataset ----
class MissingColumn : public Error {
public:
    explicit MissingColumn(const std::string& col)
        : Error("declared column not present in header: " + col) {}
};

class NonMonotoneTimes : public Error {
public:
    explicit NonMonotoneTimes(const std::string& what) : Error(what) {}
};

class OrphanObservation : public Error {
public:
    explicit OrphanObservation(const std::string& what) : Error(what) {}
};

class UnknownRole : public Error {
public:
    explicit UnknownRole(const std::string& role)
        : Error("role not declared in dataset: " + role) {}
};

// Interval-based loadings need the time grid spanning an individual's
// observed range; thrown when an interior time value is absent.
class IncompleteTimeGrid : public Error {
public:
    explicit IncompleteTimeGrid(const std::string& what) : Error(what) {}
};

// ---- curves / model builder ----
class MissingShapeParameter : public Error {
public:
    explicit MissingShapeParameter(const std::string& what) : Error(what) {}
};

class IncompleteParameterSet : public Error {
public:
    explicit IncompleteParameterSet(const std::string& what) : Error(what) {}
};

class RoleMismatch : public Error {
public:
    explicit RoleMismatch(const std::string& what) : Error(what) {}
};

class SingularStructure : public Error {
public:
    explicit SingularStructure(const std::string& what) : Error(what) {}
};

class ClassIndexOutOfRange : public Error {
public:
    explicit ClassIndexOutOfRange(const std::string& what) : Error(what) {}
};

// ---- fiml ----
class NonPDImpliedCovariance : public Error {
public:
    NonPDImpliedCovariance(const std::string& individual, double min_pivot, int class_index = -1)
        : Error("implied covariance not positive definite for individual '" + individual +
                "' (min pivot " + std::to_string(min_pivot) +
                (class_index >= 0 ? ", class " + std::to_string(class_index + 1) : "") + ")"),
          individual_id(individual), pivot(min_pivot), klass(class_index) {}
    std::string individual_id;
    double pivot;
    int klass;
};

// ---- estimator ----
class DegenerateData : public Error {
public:
    explicit DegenerateData(const std::string& what) : Error(what) {}
};

// ---- postfit ----
class NoCovarianceAvailable : public Error {
public:
    explicit NoCovarianceAvailable(const std::string& what) : Error(what) {}
};

class NotNested : public Error {
public:
    explicit NotNested(const std::string& what) : Error(what) {}
};

class NegativeStatistic : public Error {
public:
    explicit NegativeStatistic(const std::string& what) : Error(what) {}
};

class DatasetMismatch : public Error {
public:
    explicit DatasetMismatch(const std::string& what) : Error(what) {}
};

// ---- simulate ----
class NonPDTrueCovariance : public Error {
public:
    explicit NonPDTrueCovariance(const std::string& what) : Error(what) {}
};

} // namespace nlgrowth
