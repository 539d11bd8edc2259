//! Sparse mixed-integer linear program in minimization form:
//!
//! ```text
//! min  c'x
//! s.t. row_lo <= A x <= row_hi
//!      var_lo <= x   <= var_hi,  x_j integer for flagged j
//! ```

/// One decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
    pub integer: bool,
}

/// One constraint row `lower <= sum(coef * x) <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        cost: f64,
        integer: bool,
    ) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            cost,
            integer,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        lower: f64,
        upper: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            lower,
            upper,
        });
        self.constraints.len() - 1
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.variables.iter().zip(x).map(|(v, x)| v.cost * x).sum()
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.constraints[row]
            .terms
            .iter()
            .map(|&(j, a)| a * x[j])
            .sum()
    }

    /// Largest violation of any bound, row or integrality requirement.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xj) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xj).max(xj - v.upper);
            if v.integer {
                worst = worst.max((xj - xj.round()).abs());
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let act = self.row_activity(i, x);
            worst = worst.max(c.lower - act).max(act - c.upper);
        }
        worst
    }
}
